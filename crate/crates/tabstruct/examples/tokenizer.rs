//! Structure tokens and coordinate quantization for one hand-built table.
//!
//! `cargo run --example tokenizer`

use tabstruct::core::postproc::annotated_html;
use tabstruct::core::quant::{dequantize, quantize};
use tabstruct::core::tokens::{detokenize, tokenize, TokenSeq, Vocab};
use tabstruct::core::{BBox, Cell, TableGrid};

fn main() -> tabstruct::Result<()> {
    let b = |l, t, r, bt| BBox::new(l, t, r, bt);
    let grid = TableGrid::from_rows(vec![
        vec![
            Cell::spanning(1, 2).with_content("Revenue", b(20.0, 10.0, 90.0, 18.0)),
            Cell::filled().with_content("2023", b(110.0, 10.0, 140.0, 18.0)),
        ],
        vec![
            Cell::filled().with_content("Q1", b(20.0, 30.0, 34.0, 38.0)),
            Cell::empty(),
            Cell::filled().with_content("4.2", b(110.0, 30.0, 130.0, 38.0)),
        ],
    ])?;
    println!("{}", annotated_html(&grid));

    let seq = tokenize(&grid, 5)?;
    println!("tokens:   {}", seq.to_strings().join(" "));
    let vocab = Vocab::new(5);
    let ids = vocab.encode(&seq)?;
    println!("ids:      {ids:?} (vocabulary of {})", vocab.len());
    println!("triggers: {:?}", seq.trigger_positions());

    let back = detokenize(&vocab.decode(&ids));
    assert!(!back.is_repaired() && back.grid.same_structure(&grid));

    // A truncated prediction is repaired into a valid grid.
    let broken = TokenSeq(seq.0[..seq.len() - 4].to_vec());
    let repaired = detokenize(&broken);
    println!("repairs of a truncated sequence: {:?}", repaired.repairs);

    for cell in grid.non_empty_cells() {
        let bbox = cell.content_bbox.expect("annotated");
        let q = quantize(&bbox, 160.0, 160);
        let back = dequantize(&q.qbox, 160.0, 160);
        println!(
            "{:>8} {:?} -> {:?} -> {:?}",
            cell.content,
            bbox.to_array(),
            q.qbox.0,
            back.to_array()
        );
    }
    Ok(())
}
