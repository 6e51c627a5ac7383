//! Dipeptide instability weight values (DIWV) of Guruprasad, Reddy &
//! Pandit (1990), as distributed with standard protein-analysis toolkits.
//! Rows and columns are indexed alphabetically (A, C, D, ..., Y) via
//! [`crate::seq::residue_index`]; `DIWV[first][second]` weights the
//! dipeptide `first`→`second`.

#[rustfmt::skip]
pub const DIWV: [[f64; 20]; 20] = [
    [1.00, 44.94, -7.49, 1.00, 1.00, 1.00, -7.49, 1.00, 1.00, 1.00, 1.00, 1.00, 20.26, 1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 1.00], // A
    [1.00, 1.00, 20.26, 1.00, 1.00, 1.00, 33.60, 1.00, 1.00, 20.26, 33.60, 1.00, 20.26, -6.54, 1.00, 1.00, 33.60, -6.54, 24.68, 1.00], // C
    [1.00, 1.00, 1.00, 1.00, -6.54, 1.00, 1.00, 1.00, -7.49, 1.00, 1.00, 1.00, 1.00, 1.00, -6.54, 20.26, -14.03, 1.00, 1.00, 1.00], // D
    [1.00, 44.94, 20.26, 33.60, 1.00, 1.00, -6.54, 20.26, 1.00, 1.00, 1.00, 1.00, 20.26, 20.26, 1.00, 20.26, 1.00, 1.00, -14.03, 1.00], // E
    [1.00, 1.00, 13.34, 1.00, 1.00, 1.00, 1.00, 1.00, -14.03, 1.00, 1.00, 1.00, 20.26, 1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 33.60], // F
    [-7.49, 1.00, 1.00, -6.54, 1.00, 13.34, 1.00, -7.49, -7.49, 1.00, 1.00, -7.49, 1.00, 1.00, 1.00, 1.00, -7.49, 1.00, 13.34, -7.49], // G
    [1.00, 1.00, 1.00, 1.00, -9.37, -9.37, 1.00, 44.94, 24.68, 1.00, 1.00, 24.68, -1.88, 1.00, 1.00, 1.00, -6.54, 1.00, -1.88, 44.94], // H
    [1.00, 1.00, 1.00, 44.94, 1.00, 1.00, 13.34, 1.00, -7.49, 20.26, 1.00, 1.00, -1.88, 1.00, 1.00, 1.00, 1.00, -7.49, 1.00, 1.00], // I
    [1.00, 1.00, 1.00, 1.00, 1.00, -7.49, 1.00, -7.49, 1.00, -7.49, 33.60, 1.00, -6.54, 24.64, 33.60, 1.00, 1.00, -7.49, 1.00, 1.00], // K
    [1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 1.00, -7.49, 1.00, 1.00, 1.00, 20.26, 33.60, 20.26, 1.00, 1.00, 1.00, 24.68, 1.00], // L
    [13.34, 1.00, 1.00, 1.00, 1.00, 1.00, 58.28, 1.00, 1.00, 1.00, -1.88, 1.00, 44.94, -6.54, -6.54, 44.94, -1.88, 1.00, 1.00, 24.68], // M
    [1.00, -1.88, 1.00, 1.00, -14.03, -14.03, 1.00, 44.94, 24.68, 1.00, 1.00, 1.00, -1.88, -6.54, 1.00, 1.00, -7.49, 1.00, -9.37, 1.00], // N
    [20.26, -6.54, -6.54, 18.38, 20.26, 1.00, 1.00, 1.00, 1.00, 1.00, -6.54, 1.00, 20.26, 20.26, -6.54, 20.26, 1.00, 20.26, -1.88, 1.00], // P
    [1.00, -6.54, 20.26, 20.26, -6.54, 1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 20.26, 20.26, 1.00, 44.94, 1.00, -6.54, 1.00, -6.54], // Q
    [1.00, 1.00, 1.00, 1.00, 1.00, -7.49, 20.26, 1.00, 1.00, 1.00, 1.00, 13.34, 20.26, 20.26, 58.28, 44.94, 1.00, 1.00, 58.28, -6.54], // R
    [1.00, 33.60, 1.00, 20.26, 1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 44.94, 20.26, 20.26, 20.26, 1.00, 1.00, 1.00, 1.00], // S
    [1.00, 1.00, 1.00, 20.26, 13.34, -7.49, 1.00, 1.00, 1.00, 1.00, 1.00, -14.03, 1.00, -6.54, 1.00, 1.00, 1.00, 1.00, -14.03, 1.00], // T
    [1.00, 1.00, -14.03, 1.00, 1.00, -7.49, 1.00, 1.00, -1.88, 1.00, 1.00, 1.00, 20.26, 1.00, 1.00, 1.00, -7.49, 1.00, 1.00, -6.54], // V
    [-14.03, 1.00, 1.00, 1.00, 1.00, -9.37, 24.68, 1.00, 1.00, 13.34, 24.68, 13.34, 1.00, 1.00, 1.00, 1.00, -14.03, -7.49, 1.00, 1.00], // W
    [24.68, 1.00, 24.68, -6.54, 1.00, -7.49, 13.34, 1.00, 1.00, 1.00, 44.94, 1.00, 13.34, 1.00, -15.91, 1.00, -7.49, 1.00, -9.37, 13.34], // Y
];
