//! Two-photon polarization state after path-to-polarization transfer.
//!
//! The state lives in the 4-dimensional signal ⊗ idler polarization basis.
//! Forward/backward path labels are carried as a tag; once both pair
//! contributions are overlapped the tag becomes [`PairTag::Overlapped`].

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const NORM_TOLERANCE: f64 = 1e-12;

/// Basis ordering of [`TwoPhotonState::amplitudes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// |V,s⟩|V,i⟩
    VV = 0,
    /// |H,s⟩|V,i⟩
    HV = 1,
    /// |V,s⟩|H,i⟩
    VH = 2,
    /// |H,s⟩|H,i⟩
    HH = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairTag {
    ForwardPair,
    BackwardPair,
    Overlapped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhotonState {
    amplitudes: [Complex64; 4],
    tag: PairTag,
}

impl TwoPhotonState {
    pub fn new(amplitudes: [Complex64; 4], tag: PairTag) -> Result<Self> {
        let s = TwoPhotonState { amplitudes, tag };
        s.check_normalized()?;
        Ok(s)
    }

    /// A freshly generated |V,s⟩|V,i⟩ pair in the given direction.
    pub fn vv_pair(tag: PairTag) -> Self {
        let mut amplitudes = [Complex64::new(0.0, 0.0); 4];
        amplitudes[Basis::VV as usize] = Complex64::new(1.0, 0.0);
        TwoPhotonState { amplitudes, tag }
    }

    pub fn amplitudes(&self) -> &[Complex64; 4] {
        &self.amplitudes
    }

    pub fn amplitude(&self, b: Basis) -> Complex64 {
        self.amplitudes[b as usize]
    }

    pub fn tag(&self) -> PairTag {
        self.tag
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_normalized(&self) -> Result<()> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Contract(format!("state not normalized: Σ|a|² = {n}")));
        }
        Ok(())
    }

    fn require(&self, tag: PairTag, op: &str) -> Result<()> {
        if self.tag != tag {
            return Err(Error::Contract(format!(
                "{op} expects a {tag:?} state, got {:?}",
                self.tag
            )));
        }
        Ok(())
    }
}

/// Imprints the sample-arm phase ΔΦ_q = ΔΦ_s + ΔΦ_i on a forward pair.
pub fn apply_sample_phase(
    state: &TwoPhotonState,
    delta_phi_s: f64,
    delta_phi_i: f64,
) -> Result<TwoPhotonState> {
    state.require(PairTag::ForwardPair, "apply_sample_phase")?;
    let phase = Complex64::from_polar(1.0, delta_phi_s + delta_phi_i);
    let mut out = state.clone();
    for a in out.amplitudes.iter_mut() {
        *a *= phase;
    }
    Ok(out)
}

/// Double pass through the wavelength-selective wave plate followed by
/// overlap of the forward and backward pair contributions.
///
/// The wave plate rotates the forward signal polarization by 90° (V→H,
/// H→−V) and leaves the idler untouched. The two contributions are then
/// summed with weight 1/√2 each; they must be orthogonal so that no
/// interference term appears.
pub fn apply_wswp_and_overlap(
    forward: &TwoPhotonState,
    backward: &TwoPhotonState,
) -> Result<TwoPhotonState> {
    forward.require(PairTag::ForwardPair, "apply_wswp_and_overlap (forward)")?;
    backward.require(PairTag::BackwardPair, "apply_wswp_and_overlap (backward)")?;
    forward.check_normalized()?;
    backward.check_normalized()?;

    let f = &forward.amplitudes;
    // signal rotation: |V,s⟩ → |H,s⟩, |H,s⟩ → −|V,s⟩, idler unchanged
    let rotated = [-f[Basis::HV as usize], f[Basis::VV as usize], -f[Basis::HH as usize], f[Basis::VH as usize]];

    let overlap: Complex64 = rotated
        .iter()
        .zip(backward.amplitudes.iter())
        .map(|(r, b)| r.conj() * b)
        .sum();
    if overlap.norm() > NORM_TOLERANCE {
        return Err(Error::Contract(format!(
            "forward and backward contributions are not orthogonal (|⟨f|b⟩| = {})",
            overlap.norm()
        )));
    }

    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut amplitudes = [Complex64::new(0.0, 0.0); 4];
    for (k, a) in amplitudes.iter_mut().enumerate() {
        *a = (rotated[k] + backward.amplitudes[k]) * s;
    }
    TwoPhotonState::new(amplitudes, PairTag::Overlapped)
}

/// σ_x projection of the signal photon after the idler has been filtered out.
///
/// Returns `(p_plus, p_minus)` for the |±⟩ = (|V⟩ ± |H⟩)/√2 outcomes, computed
/// from the signal's reduced density matrix.
pub fn project_sigma_x(state: &TwoPhotonState) -> Result<(f64, f64)> {
    state.require(PairTag::Overlapped, "project_sigma_x")?;
    let a = &state.amplitudes;
    // ρ_s[j][k] = Σ_idler a(j, idler) a*(k, idler), j,k ∈ {V, H}
    let pairs = [(Basis::VV, Basis::HV), (Basis::VH, Basis::HH)];
    let mut p_plus = 0.0;
    let mut p_minus = 0.0;
    for (v, h) in pairs {
        let av = a[v as usize];
        let ah = a[h as usize];
        p_plus += ((av + ah) * std::f64::consts::FRAC_1_SQRT_2).norm_sqr();
        p_minus += ((av - ah) * std::f64::consts::FRAC_1_SQRT_2).norm_sqr();
    }
    Ok((p_plus, p_minus))
}

/// Overlapped state for a given two-photon phase, built from the generation steps.
pub fn overlapped_state(delta_phi_q: f64) -> TwoPhotonState {
    let forward = apply_sample_phase(&TwoPhotonState::vv_pair(PairTag::ForwardPair), delta_phi_q, 0.0)
        .expect("fresh forward pair");
    apply_wswp_and_overlap(&forward, &TwoPhotonState::vv_pair(PairTag::BackwardPair))
        .expect("cross-polarized contributions")
}
