//! Evaluation metrics for logical and physical table structure.

pub mod ap;
pub mod car;
pub mod grits;
pub mod strsim;
pub mod teds;
pub mod tree;

pub use ap::{average_precision, coco_ap, Detection, Interpolation};
pub use car::{
    car_relations, car_score, car_sweep, weighted_f1, AdjacencyRelation, CarMatch, Direction, Prf,
};
pub use grits::{grits, GritsVariant};
pub use teds::teds;
pub use tree::TableTree;
