//! `serialize_with` helpers: vectors as flat arrays, matrices as arrays of rows.

use nalgebra::{DMatrix, DVector};
use serde::Serializer;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn vectors3<S: Serializer>(v: &[DVector<f64>; 3], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.iter().copied().collect::<Vec<f64>>()))
}

pub(crate) fn matrices3<S: Serializer>(m: &[DMatrix<f64>; 3], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(m.iter().map(rows))
}
