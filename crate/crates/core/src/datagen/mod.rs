//! Seeded synthetic table renderer.
//!
//! Every sample gets its own random stream derived from `(seed, index)`, so
//! datasets are reproducible byte for byte and samples can be generated in
//! any order or in parallel.

mod font;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BBox, Cell, TableGrid};
use crate::postproc::TextLine;

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
}

impl IntRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentStyle {
    /// Dark glyph-sized blocks; no font needed.
    PseudoText,
    /// Built-in 3×5 bitmap glyphs.
    Glyphs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerticalAlign {
    Center,
    /// Top, middle or bottom per cell, which misaligns content within rows.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// Drop words and characters until the line fits.
    Shrink,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub rows: IntRange,
    pub cols: IntRange,
    /// Probability that a simple cell is empty.
    pub p_empty: f64,
    /// Probability that a free slot starts a spanning cell.
    pub p_span: f64,
    pub max_span: u32,
    /// Canvas side in pixels; must be divisible by 16.
    pub image_side: u32,
    /// Minimum distance between the table and the canvas edge.
    pub margin: u32,
    /// Horizontal advance of one character; ink is one pixel narrower.
    pub char_width: u32,
    pub glyph_height: u32,
    pub cell_padding: u32,
    pub words_per_line: IntRange,
    pub chars_per_word: IntRange,
    /// Probability that a non-empty cell gets a second text line when it fits.
    pub p_multiline: f64,
    pub content_style: ContentStyle,
    pub vertical_align: VerticalAlign,
    pub draw_borders: bool,
    pub overflow: OverflowPolicy,
    pub alphabet: String,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rows: IntRange::new(2, 10),
            cols: IntRange::new(2, 6),
            p_empty: 0.15,
            p_span: 0.1,
            max_span: 5,
            image_side: 608,
            margin: 16,
            char_width: 8,
            glyph_height: 10,
            cell_padding: 4,
            words_per_line: IntRange::new(1, 3),
            chars_per_word: IntRange::new(1, 6),
            p_multiline: 0.2,
            content_style: ContentStyle::PseudoText,
            vertical_align: VerticalAlign::Center,
            draw_borders: true,
            overflow: OverflowPolicy::Shrink,
            alphabet: "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789".into(),
        }
    }
}

impl GenConfig {
    /// Small tables on a 160 px canvas, matching the desk-scale model.
    pub fn desk() -> Self {
        Self {
            rows: IntRange::new(2, 5),
            cols: IntRange::new(2, 4),
            max_span: 3,
            image_side: 160,
            margin: 8,
            char_width: 4,
            glyph_height: 5,
            cell_padding: 2,
            words_per_line: IntRange::new(1, 2),
            chars_per_word: IntRange::new(1, 4),
            ..Self::default()
        }
    }

    fn min_col_width(&self) -> u32 {
        2 + 2 * self.cell_padding + self.char_width
    }

    fn min_row_height(&self) -> u32 {
        2 + 2 * self.cell_padding + self.glyph_height
    }

    fn line_gap(&self) -> u32 {
        (self.glyph_height / 2).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [
            ("p_empty", self.p_empty),
            ("p_span", self.p_span),
            ("p_multiline", self.p_multiline),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        for (name, r) in [
            ("rows", self.rows),
            ("cols", self.cols),
            ("words_per_line", self.words_per_line),
            ("chars_per_word", self.chars_per_word),
        ] {
            if r.min == 0 || r.min > r.max {
                return bad(format!("{name} range {}..={} is empty", r.min, r.max));
            }
        }
        if self.image_side == 0 || self.image_side % 16 != 0 {
            return bad(format!(
                "image_side {} is not a positive multiple of 16",
                self.image_side
            ));
        }
        if self.max_span == 0 {
            return bad("max_span must be at least 1".into());
        }
        if self.max_span as usize > self.cols.max {
            return bad(format!(
                "max_span {} exceeds the largest column count {}",
                self.max_span, self.cols.max
            ));
        }
        if self.char_width < 2 || self.glyph_height == 0 {
            return bad("glyphs need char_width >= 2 and glyph_height >= 1".into());
        }
        if self.content_style == ContentStyle::Glyphs
            && (self.char_width <= font::GLYPH_W || self.glyph_height < font::GLYPH_H)
        {
            return bad(format!(
                "bitmap glyphs need char_width > {} and glyph_height >= {}",
                font::GLYPH_W,
                font::GLYPH_H
            ));
        }
        if self.alphabet.chars().all(char::is_whitespace) {
            return bad("alphabet is empty".into());
        }
        let avail = self.image_side.saturating_sub(2 * self.margin) as usize;
        if self.cols.max * self.min_col_width() as usize > avail
            || self.rows.max * self.min_row_height() as usize > avail
        {
            return bad(format!(
                "a {}x{} table does not fit in {} px",
                self.rows.max, self.cols.max, self.image_side
            ));
        }
        Ok(())
    }

    /// Random stream for sample `index`.
    pub fn rng_for(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// One rendered table with exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    /// Fully annotated grid: non-empty cells carry text and content box.
    pub grid: TableGrid,
    /// Rendered text lines, one per line of cell content.
    pub text_lines: Vec<TextLine>,
}

/// Samples a valid logical structure. Spans only ever cover free slots, and
/// only simple cells may be empty.
pub fn sample_structure(config: &GenConfig, rng: &mut impl Rng) -> Result<TableGrid> {
    config.validate()?;
    let n_rows = config.rows.sample(rng);
    let n_cols = config.cols.sample(rng);
    let mut taken = vec![vec![false; n_cols]; n_rows];
    let mut rows = Vec::with_capacity(n_rows);
    for r in 0..n_rows {
        let mut row = Vec::new();
        for c in 0..n_cols {
            if taken[r][c] {
                continue;
            }
            let mut rs = 1;
            let mut cs = 1;
            if config.max_span > 1 && rng.random_bool(config.p_span) {
                let max = config.max_span as usize;
                // At least one of the two spans exceeds one.
                loop {
                    rs = rng.random_range(1..=max);
                    cs = rng.random_range(1..=max);
                    if rs > 1 || cs > 1 {
                        break;
                    }
                }
                rs = rs.min(n_rows - r);
                cs = cs.min(n_cols - c);
                cs = (c..c + cs).take_while(|&cc| !taken[r][cc]).count();
                while rs > 1 && (c..c + cs).any(|cc| taken[r + rs - 1][cc]) {
                    rs -= 1;
                }
            }
            for row_taken in &mut taken[r..r + rs] {
                for slot in &mut row_taken[c..c + cs] {
                    *slot = true;
                }
            }
            let cell = if rs > 1 || cs > 1 {
                Cell::spanning(rs as u32, cs as u32)
            } else if rng.random_bool(config.p_empty) {
                Cell::empty()
            } else {
                Cell::filled()
            };
            row.push(cell);
        }
        rows.push(row);
    }
    TableGrid::from_rows(rows)
}

/// Splits `total` pixels into `n` parts of at least `min` each.
fn split_extent(total: u32, n: usize, min: u32, rng: &mut impl Rng) -> Vec<u32> {
    let extra = total - min * n as u32;
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..2.5)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut parts: Vec<u32> = weights
        .iter()
        .map(|w| min + (extra as f64 * w / wsum).floor() as u32)
        .collect();
    let used: u32 = parts.iter().sum();
    if let Some(last) = parts.last_mut() {
        *last += total - used;
    }
    parts
}

fn boundaries(start: u32, parts: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(parts.len() + 1);
    let mut acc = start;
    out.push(acc);
    for p in parts {
        acc += p;
        out.push(acc);
    }
    out
}

struct Canvas<'a> {
    image: &'a mut RgbImage,
}

impl Canvas<'_> {
    fn fill(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, color: Rgb<u8>) {
        for y in y0..y1.min(self.image.height()) {
            for x in x0..x1.min(self.image.width()) {
                self.image.put_pixel(x, y, color);
            }
        }
    }

    fn outline(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, color: Rgb<u8>) {
        self.fill(x0, y0, x1, y0 + 1, color);
        self.fill(x0, y1 - 1, x1, y1, color);
        self.fill(x0, y0, x0 + 1, y1, color);
        self.fill(x1 - 1, y0, x1, y1, color);
    }
}

/// Tight pixel extent of drawn ink.
#[derive(Default)]
struct Ink(Option<(u32, u32, u32, u32)>);

impl Ink {
    fn add(&mut self, x0: u32, y0: u32, x1: u32, y1: u32) {
        self.0 = Some(match self.0 {
            None => (x0, y0, x1, y1),
            Some((a, b, c, d)) => (a.min(x0), b.min(y0), c.max(x1), d.max(y1)),
        });
    }

    fn bbox(&self) -> Option<BBox> {
        self.0
            .map(|(a, b, c, d)| BBox::new(a as f32, b as f32, c as f32, d as f32))
    }
}

fn random_word(config: &GenConfig, n_chars: usize, rng: &mut impl Rng) -> String {
    let alphabet: Vec<char> = config
        .alphabet
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect();
    (0..n_chars)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())])
        .collect()
}

fn line_width(words: &[String], cw: u32) -> u32 {
    let chars: usize = words.iter().map(|w| w.chars().count()).sum();
    let gaps = words.len().saturating_sub(1);
    ((chars + gaps) as u32 * cw).saturating_sub(1)
}

/// Renders `grid` onto a fresh canvas and fills in content and boxes.
pub fn render(grid: &TableGrid, config: &GenConfig, rng: &mut impl Rng) -> Result<Sample> {
    config.validate()?;
    grid.validate()?;
    let side = config.image_side;
    let bg = rng.random_range(225..=255u8);
    let mut image = RgbImage::from_pixel(side, side, Rgb([bg, bg, bg]));
    let n_rows = grid.n_rows();
    let n_cols = grid.n_cols();
    let mut grid = grid.clone();
    let mut text_lines = Vec::new();
    if n_rows == 0 || n_cols == 0 {
        return Ok(Sample {
            image,
            grid,
            text_lines,
        });
    }

    let avail = side - 2 * config.margin;
    let min_w = n_cols as u32 * config.min_col_width();
    let min_h = n_rows as u32 * config.min_row_height();
    if min_w > avail || min_h > avail {
        return Err(Error::Config(format!(
            "{n_rows}x{n_cols} table does not fit in {side} px"
        )));
    }
    let table_w = rng.random_range(min_w.max(avail * 11 / 20)..=avail);
    let table_h = rng.random_range(min_h.max(avail * 11 / 20)..=avail);
    let left = rng.random_range(config.margin..=side - config.margin - table_w);
    let top = rng.random_range(config.margin..=side - config.margin - table_h);
    let xs = boundaries(
        left,
        &split_extent(table_w, n_cols, config.min_col_width(), rng),
    );
    let ys = boundaries(
        top,
        &split_extent(table_h, n_rows, config.min_row_height(), rng),
    );

    let border = Rgb([90, 90, 90]);
    let cw = config.char_width;
    let gh = config.glyph_height;
    let gap = config.line_gap();
    let anchors = grid.layout().anchors;
    let mut canvas = Canvas { image: &mut image };

    for (idx, cell) in grid.cells_mut().enumerate() {
        let (r, c) = anchors[idx];
        let (cx0, cx1) = (xs[c], xs[c + cell.colspan as usize]);
        let (cy0, cy1) = (ys[r], ys[r + cell.rowspan as usize]);
        if config.draw_borders {
            canvas.outline(cx0, cy0, cx1, cy1, border);
        }
        if cell.is_empty {
            continue;
        }
        let x0 = cx0 + 1 + config.cell_padding;
        let y0 = cy0 + 1 + config.cell_padding;
        let avail_w = (cx1 - 1 - config.cell_padding).saturating_sub(x0);
        let avail_h = (cy1 - 1 - config.cell_padding).saturating_sub(y0);
        if avail_w + 1 < cw || avail_h < gh {
            return Err(Error::ContentOverflow { row: r, col: c });
        }

        let wants_two = rng.random_bool(config.p_multiline);
        let n_lines = if wants_two && avail_h >= 2 * gh + gap {
            2
        } else {
            1
        };
        let mut lines: Vec<Vec<String>> = Vec::with_capacity(n_lines);
        for _ in 0..n_lines {
            let n_words = config.words_per_line.sample(rng);
            let mut words: Vec<String> = (0..n_words)
                .map(|_| {
                    let n = config.chars_per_word.sample(rng);
                    random_word(config, n, rng)
                })
                .collect();
            if line_width(&words, cw) > avail_w && config.overflow == OverflowPolicy::Error {
                return Err(Error::ContentOverflow { row: r, col: c });
            }
            while line_width(&words, cw) > avail_w {
                if words.len() > 1 {
                    words.pop();
                } else {
                    words[0].pop();
                }
            }
            lines.push(words);
        }

        let block_h = n_lines as u32 * gh + (n_lines as u32 - 1) * gap;
        let slack_y = avail_h - block_h;
        let dy = match config.vertical_align {
            VerticalAlign::Center => slack_y / 2,
            VerticalAlign::Random => [0, slack_y / 2, slack_y][rng.random_range(0..3)],
        };
        let halign = rng.random_range(0..3u32);
        let ink_color = rng.random_range(0..=70u8);
        let ink = Rgb([ink_color, ink_color, ink_color]);

        let mut content_box: Option<BBox> = None;
        let mut texts = Vec::with_capacity(n_lines);
        for (li, words) in lines.iter().enumerate() {
            let w = line_width(words, cw);
            let slack_x = avail_w - w;
            let lx = x0 + [0, slack_x / 2, slack_x][halign as usize];
            let ly = y0 + dy + li as u32 * (gh + gap);
            let mut line_ink = Ink::default();
            let mut x = lx;
            for word in words {
                for ch in word.chars() {
                    draw_char(&mut canvas, config, ch, x, ly, ink, &mut line_ink);
                    x += cw;
                }
                x += cw;
            }
            let bbox = line_ink
                .bbox()
                .expect("every line has at least one character");
            let text = words.join(" ");
            content_box = Some(content_box.map_or(bbox, |b| b.union(&bbox)));
            text_lines.push(TextLine {
                bbox,
                text: text.clone(),
            });
            texts.push(text);
        }
        cell.content = texts.join(" ");
        cell.content_bbox = content_box;
    }
    Ok(Sample {
        image,
        grid,
        text_lines,
    })
}

fn draw_char(
    canvas: &mut Canvas<'_>,
    config: &GenConfig,
    ch: char,
    x: u32,
    y: u32,
    color: Rgb<u8>,
    ink: &mut Ink,
) {
    let cw = config.char_width;
    let gh = config.glyph_height;
    match config.content_style {
        ContentStyle::PseudoText => {
            canvas.fill(x, y, x + cw - 1, y + gh, color);
            ink.add(x, y, x + cw - 1, y + gh);
        }
        ContentStyle::Glyphs => {
            let scale = ((cw - 1) / font::GLYPH_W).min(gh / font::GLYPH_H).max(1);
            for (gy, bits) in font::glyph(ch).iter().enumerate() {
                for gx in 0..font::GLYPH_W {
                    if bits & (1 << (font::GLYPH_W - 1 - gx)) != 0 {
                        let px = x + gx * scale;
                        let py = y + gy as u32 * scale;
                        canvas.fill(px, py, px + scale, py + scale, color);
                        ink.add(px, py, px + scale, py + scale);
                    }
                }
            }
        }
    }
}

/// Generates sample `index` of the dataset described by `config`.
pub fn generate_one(config: &GenConfig, index: u64) -> Result<Sample> {
    let mut rng = config.rng_for(index);
    let grid = sample_structure(config, &mut rng)?;
    render(&grid, config, &mut rng)
}

/// Generates samples `0..n`.
pub fn generate(config: &GenConfig, n: usize) -> Result<Vec<Sample>> {
    (0..n as u64).map(|i| generate_one(config, i)).collect()
}
