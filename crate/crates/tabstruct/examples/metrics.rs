//! Every table metric on a prediction that misses one column and shifts
//! its boxes.
//!
//! `cargo run --example metrics`

use tabstruct::core::metrics::{
    car_score, car_sweep, coco_ap, grits, teds, weighted_f1, CarMatch, Detection, GritsVariant,
    Interpolation, TableTree,
};
use tabstruct::core::postproc::annotated_html;
use tabstruct::core::{BBox, Cell, TableGrid};

fn table(cols: usize, dx: f32) -> TableGrid {
    let rows = (0..3)
        .map(|r| {
            (0..cols)
                .map(|c| {
                    let (x, y) = (10.0 + c as f32 * 40.0 + dx, 10.0 + r as f32 * 20.0);
                    Cell::filled()
                        .with_content(format!("r{r}c{c}"), BBox::new(x, y, x + 30.0, y + 10.0))
                })
                .collect()
        })
        .collect();
    TableGrid::from_rows(rows).expect("rectangular")
}

fn main() -> tabstruct::Result<()> {
    let gt = table(3, 0.0);
    let pred = table(2, 4.0);

    let (tp, tg) = (
        TableTree::from_html(&annotated_html(&pred))?,
        TableTree::from_html(&annotated_html(&gt))?,
    );
    println!("TEDS    {:.4}", teds(&tp, &tg, false));
    println!("S-TEDS  {:.4}", teds(&tp, &tg, true));

    let content = car_score(&pred, &gt, CarMatch::Content)?;
    println!(
        "CAR (content)  P {:.3} R {:.3} F1 {:.3}",
        content.precision, content.recall, content.f1
    );
    let sweep = car_sweep(&pred, &gt, &[0.5, 0.6, 0.7])?;
    for (sigma, prf) in &sweep.per_sigma {
        println!("CAR (IoU >= {sigma})  F1 {:.3}", prf.f1);
    }
    println!("WAvg.F1 {:.3}", sweep.weighted_f1);
    println!(
        "WAvg.F1 of (66.8, 51.7) at (0.5, 0.6): {:.1}",
        weighted_f1(&[(0.5, 66.8), (0.6, 51.7)])
    );

    for v in [GritsVariant::Top, GritsVariant::Cont, GritsVariant::Loc] {
        println!("GriTS-{v:?} {:.4}", grits(&pred, &gt, v)?);
    }

    let dets: Vec<Detection> = pred
        .non_empty_cells()
        .enumerate()
        .map(|(i, c)| Detection {
            image: 0,
            bbox: c.content_bbox.expect("annotated"),
            score: 1.0 - i as f64 * 0.01,
        })
        .collect();
    let gts = vec![gt
        .non_empty_cells()
        .filter_map(|c| c.content_bbox)
        .collect::<Vec<_>>()];
    println!(
        "AP@[.50:.95] {:.4}",
        coco_ap(&dets, &gts, Interpolation::AllPoints)
    );
    Ok(())
}
