//! Per-sequence physicochemical descriptors.
//!
//! All scales are the standard published ones: Kyte–Doolittle hydropathy
//! for GRAVY, the Eisenberg consensus scale for the hydrophobic moment,
//! Henderson–Hasselbalch charge with the classic Lehninger textbook pKa
//! values (which reproduce reference pI/charge values for cationic
//! peptides far better than the ProtParam-style set), average residue
//! masses for molecular weight, and the Guruprasad dipeptide weights for
//! the instability index.

mod diwv;

use serde::{Deserialize, Serialize};

use crate::seq::{residue_index, PeptideSequence};

// ── Scales (indexed alphabetically via residue_index) ──────────────────────

/// Kyte–Doolittle hydropathy.
#[rustfmt::skip]
const KYTE_DOOLITTLE: [f64; 20] = [
    1.8,  // A
    2.5,  // C
   -3.5,  // D
   -3.5,  // E
    2.8,  // F
   -0.4,  // G
   -3.2,  // H
    4.5,  // I
   -3.9,  // K
    3.8,  // L
    1.9,  // M
   -3.5,  // N
   -1.6,  // P
   -3.5,  // Q
   -4.5,  // R
   -0.8,  // S
   -0.7,  // T
    4.2,  // V
   -0.9,  // W
   -1.3,  // Y
];

/// Eisenberg consensus hydrophobicity.
#[rustfmt::skip]
const EISENBERG: [f64; 20] = [
    0.62,  // A
    0.29,  // C
   -0.90,  // D
   -0.74,  // E
    1.19,  // F
    0.48,  // G
   -0.40,  // H
    1.38,  // I
   -1.50,  // K
    1.06,  // L
    0.64,  // M
   -0.78,  // N
    0.12,  // P
   -0.85,  // Q
   -2.53,  // R
   -0.18,  // S
   -0.05,  // T
    1.08,  // V
    0.81,  // W
    0.26,  // Y
];

/// Average residue masses in Da (peptide-bond residues, water subtracted).
#[rustfmt::skip]
const RESIDUE_MASS: [f64; 20] = [
     71.0788,  // A
    103.1388,  // C
    115.0886,  // D
    129.1155,  // E
    147.1766,  // F
     57.0519,  // G
    137.1411,  // H
    113.1594,  // I
    128.1741,  // K
    113.1594,  // L
    131.1926,  // M
    114.1038,  // N
     97.1167,  // P
    128.1307,  // Q
    156.1875,  // R
     87.0782,  // S
    101.1051,  // T
     99.1326,  // V
    186.2132,  // W
    163.1760,  // Y
];

const WATER_MASS: f64 = 18.01524;

// Lehninger pKa values for ionizable groups.
const PKA_N_TERMINUS: f64 = 9.69;
const PKA_C_TERMINUS: f64 = 2.34;
const PKA_LYS: f64 = 10.53;
const PKA_ARG: f64 = 12.48;
const PKA_HIS: f64 = 6.00;
const PKA_ASP: f64 = 3.86;
const PKA_GLU: f64 = 4.25;
const PKA_CYS: f64 = 8.33;
const PKA_TYR: f64 = 10.07;

/// Periodicity of an ideal α-helix in degrees per residue, the default
/// angle for [`hydrophobic_moment`].
pub const DEFAULT_HELIX_ANGLE_DEG: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhyschemError {
    #[error("pH {ph} outside the open interval (0, 14)")]
    InvalidPh { ph: f64 },
}

fn idx(aa: char) -> usize {
    residue_index(aa).expect("PeptideSequence invariant: canonical residues only")
}

/// Grand average of hydropathy: mean Kyte–Doolittle value per residue.
pub fn gravy(seq: &PeptideSequence) -> f64 {
    let sum: f64 = seq.residues().map(|r| KYTE_DOOLITTLE[idx(r)]).sum();
    sum / seq.len() as f64
}

/// Average molecular weight in Da (residue masses plus one water).
pub fn molecular_weight(seq: &PeptideSequence) -> f64 {
    let sum: f64 = seq.residues().map(|r| RESIDUE_MASS[idx(r)]).sum();
    sum + WATER_MASS
}

fn charge_unchecked(seq: &PeptideSequence, ph: f64) -> f64 {
    // Positive groups carry +1/(1+10^(pH−pKa)); negative −1/(1+10^(pKa−pH)).
    let positive = |pka: f64| 1.0 / (1.0 + 10f64.powf(ph - pka));
    let negative = |pka: f64| -1.0 / (1.0 + 10f64.powf(pka - ph));
    let mut c = positive(PKA_N_TERMINUS) + negative(PKA_C_TERMINUS);
    for r in seq.residues() {
        c += match r {
            'K' => positive(PKA_LYS),
            'R' => positive(PKA_ARG),
            'H' => positive(PKA_HIS),
            'D' => negative(PKA_ASP),
            'E' => negative(PKA_GLU),
            'C' => negative(PKA_CYS),
            'Y' => negative(PKA_TYR),
            _ => 0.0,
        };
    }
    c
}

/// Henderson–Hasselbalch net charge at the given pH (exclusive 0–14).
pub fn net_charge(seq: &PeptideSequence, ph: f64) -> Result<f64, PhyschemError> {
    if !(ph > 0.0 && ph < 14.0) {
        return Err(PhyschemError::InvalidPh { ph });
    }
    Ok(charge_unchecked(seq, ph))
}

/// Isoelectric point by bisection of the charge curve over pH ∈ [0, 14].
///
/// The curve is strictly decreasing, positive near pH 0 (free N-terminus)
/// and negative at pH 14 for desk-scale peptides, so the root is unique.
/// Bisection runs to an interval width of 1e-4, comfortably inside the
/// 1e-3 contract and tight enough that `net_charge(pI)` stays within
/// ±0.01 of zero even for lysine-saturated sequences.
pub fn isoelectric_point(seq: &PeptideSequence) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 14.0f64);
    if charge_unchecked(seq, hi) >= 0.0 {
        return hi; // saturated: only reachable far outside design lengths
    }
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if charge_unchecked(seq, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Eisenberg hydrophobic moment, per-residue normalized:
/// `μH = (1/N)·√[(Σ hᵢ·cos(iδ))² + (Σ hᵢ·sin(iδ))²]` with position index
/// `i` starting at 0 and `δ` in degrees per residue.
pub fn hydrophobic_moment(seq: &PeptideSequence, delta_deg: f64) -> f64 {
    let delta = delta_deg.to_radians();
    let (mut cos_sum, mut sin_sum) = (0.0f64, 0.0f64);
    for (i, r) in seq.residues().enumerate() {
        let h = EISENBERG[idx(r)];
        let angle = i as f64 * delta;
        cos_sum += h * angle.cos();
        sin_sum += h * angle.sin();
    }
    (cos_sum * cos_sum + sin_sum * sin_sum).sqrt() / seq.len() as f64
}

/// Fraction and 0-based positions of cationic K/R residues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrStats {
    pub fraction: f64,
    pub positions: Vec<usize>,
}

pub fn kr_stats(seq: &PeptideSequence) -> KrStats {
    let positions: Vec<usize> = seq
        .residues()
        .enumerate()
        .filter(|(_, r)| matches!(r, 'K' | 'R'))
        .map(|(i, _)| i)
        .collect();
    KrStats {
        fraction: positions.len() as f64 / seq.len() as f64,
        positions,
    }
}

/// Guruprasad instability index: `(10/L)·Σ DIWV(resᵢ, resᵢ₊₁)`.
/// A single-residue peptide has no dipeptides and scores 0.
pub fn instability_index(seq: &PeptideSequence) -> f64 {
    let residues: Vec<usize> = seq.residues().map(idx).collect();
    let sum: f64 = residues
        .windows(2)
        .map(|w| diwv::DIWV[w[0]][w[1]])
        .sum();
    10.0 * sum / seq.len() as f64
}

/// All descriptors for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhyschemProfile {
    pub length: usize,
    pub molecular_weight: f64,
    pub gravy: f64,
    pub net_charge_ph7: f64,
    pub isoelectric_point: f64,
    pub hydrophobic_moment: f64,
    pub kr_fraction: f64,
    pub kr_positions: Vec<usize>,
    pub instability_index: f64,
}

pub fn profile(seq: &PeptideSequence) -> PhyschemProfile {
    let kr = kr_stats(seq);
    PhyschemProfile {
        length: seq.len(),
        molecular_weight: molecular_weight(seq),
        gravy: gravy(seq),
        net_charge_ph7: charge_unchecked(seq, 7.0),
        isoelectric_point: isoelectric_point(seq),
        hydrophobic_moment: hydrophobic_moment(seq, DEFAULT_HELIX_ANGLE_DEG),
        kr_fraction: kr.fraction,
        kr_positions: kr.positions,
        instability_index: instability_index(seq),
    }
}

impl PhyschemProfile {
    /// Deterministic one-line rendering: fixed field order, 3 decimals.
    pub fn summary_text(&self) -> String {
        format!(
            "len={} mw={:.3} gravy={:.3} charge7={:.3} pi={:.3} uh={:.3} krf={:.3} instab={:.3}",
            self.length,
            self.molecular_weight,
            self.gravy,
            self.net_charge_ph7,
            self.isoelectric_point,
            self.hydrophobic_moment,
            self.kr_fraction,
            self.instability_index,
        )
    }
}
