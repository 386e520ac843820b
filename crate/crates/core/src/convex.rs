//! Conic form and solver back end for the per-slot convex subproblem.
//!
//! One inner step of the iterative scheduler maximizes the weighted sum of
//! epigraph rates subject to (i) reweighted-l1 surrogates of the binary
//! association constraints, (ii) a concave log-domain lower bound on the
//! access rates, and (iii) the concave backhaul capacity.  After the
//! exponential change of variables `p = exp(p_bar)` everything is
//! representable with linear rows plus exponential cones:
//!
//! * power epigraphs `u >= exp(p_bar)` feed every budget row,
//! * a log-sum-exp epigraph per (BS, user, sub-channel) upper-bounds the
//!   log of the received interference-plus-noise power,
//! * the backhaul rate uses the perspective of the logarithm,
//!   `(r, W, W + c P)` in the exponential cone iff `r <= W ln(1 + c P / W)`.
//!
//! Internally rates are expressed in units of `T_S * W_SC` bits and
//! bandwidths in units of the satellite band, which keeps the problem data
//! well scaled for the interior-point solver (Clarabel).

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus,
    SupportedConeT::{self, ExponentialConeT, NonnegativeConeT, ZeroConeT},
};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Channel gains below this floor enter the interference bound at the
/// floor, keeping logarithms finite.
const MIN_GAIN: f64 = 1e-30;

/// Default log-power floor (watts) before the per-instance adaptation that
/// keeps tiny power caps strictly feasible.  Kept well below the
/// reweighting epsilon (1e-6) so a floored link contributes a negligible
/// share of any occupancy budget, but high enough that its power
/// epigraph cone stays numerically well-posed.
const POWER_FLOOR_W: f64 = 1e-9;

/// How the backhaul capacity constraint is encoded.
#[derive(Debug, Clone, Default)]
pub enum BackhaulModel {
    /// Exact encoding through the perspective-of-log exponential cone.
    #[default]
    Cone,
    /// First-order expansion of the capacity around the given operating
    /// point, for use where an exponential cone is unavailable.  The
    /// expansion is refreshed by the outer iteration like every other
    /// surrogate.
    Linearized {
        bs_power_w: Vec<f64>,
        bandwidth_hz: Array2<f64>,
    },
}

/// Data of one convex subproblem: channel slices for the current slot,
/// demand weights, reweighting coefficients and rate-bound coefficients
/// from the previous iterate, plus the physical caps.
#[derive(Debug, Clone)]
pub struct SubproblemSpec {
    /// Demand weight per user, bits.  Users at zero weight are treated as
    /// finished: their epigraph rate is pinned to zero and no rate bound
    /// rows are emitted for them (their power variables remain, so they
    /// still show up in everyone else's interference).
    pub weights_bits: Vec<f64>,
    /// Access gains for this slot, shape (num_bs, num_ue, num_sc).
    pub access_gain: Array3<f64>,
    /// Backhaul gains for this slot, shape (num_leo, num_bs).
    pub backhaul_gain: Array2<f64>,
    /// Reweighting for user power occupancy, shape (num_bs, num_ue, num_sc).
    pub zeta: Array3<f64>,
    /// Reweighting for user-BS association, shape (num_bs, num_ue).
    pub xi: Array2<f64>,
    /// Reweighting for backhaul bandwidth occupancy, shape (num_leo, num_bs).
    pub chi: Array2<f64>,
    /// Slope of the concave rate bound per (n, k, s), in (0, 1].
    pub bound_slope: Array3<f64>,
    /// Offset of the concave rate bound per (n, k, s).
    pub bound_offset: Array3<f64>,
    pub ue_max_power_w: f64,
    pub bs_max_power_w: f64,
    pub leo_bandwidth_hz: f64,
    pub max_sc_per_ue: usize,
    pub ts_duration_s: f64,
    pub sc_bandwidth_hz: f64,
    /// Noise power in one access sub-channel, watts.
    pub noise_per_sc_w: f64,
    /// Noise spectral density at the satellites, W/Hz.
    pub noise_density_w_hz: f64,
    /// Backhaul encoding (exact cone by default).
    pub backhaul_model: BackhaulModel,
    /// Optional floor on every BS epigraph rate, bits.  Diagnostic knob:
    /// forcing it above the achievable capacity yields a certified
    /// infeasibility.
    pub lambda_bs_floor_bits: Option<f64>,
    /// Optional hard support over user links, shape (num_bs, num_ue, num_sc).
    /// Links outside it are eliminated: power fixed at the conditioning
    /// floor, no rate terms, no interference, no occupancy share.  When a
    /// support is present, links of finished users are eliminated too, and
    /// a user keeping no link at some BS gets its epigraph rate there
    /// pinned to zero instead of a rate bound.  `None` keeps every link.
    pub ue_support: Option<Array3<bool>>,
    /// Optional hard support over satellite-BS pairs, shape
    /// (num_leo, num_bs).  Pairs outside it are fixed at zero bandwidth
    /// and emit no backhaul cone.  `None` keeps every pair.
    pub bs_leo_support: Option<Array2<bool>>,
}

impl SubproblemSpec {
    /// Dimensions (num_bs, num_ue, num_sc, num_leo).
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let (n, k, s) = self.access_gain.dim();
        let (m, _) = self.backhaul_gain.dim();
        (n, k, s, m)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k, s, m) = self.dims();
        if n == 0 || k == 0 || s == 0 || m == 0 {
            return Err(Error::Config("subproblem has an empty dimension".into()));
        }
        if self.backhaul_gain.dim().1 != n {
            return Err(Error::Config(format!(
                "backhaul gain has {} BS columns, access gain has {n}",
                self.backhaul_gain.dim().1
            )));
        }
        if self.weights_bits.len() != k {
            return Err(Error::Config(format!(
                "got {} weights for {k} users",
                self.weights_bits.len()
            )));
        }
        if self.weights_bits.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("weights must be finite and >= 0".into()));
        }
        if self.zeta.dim() != (n, k, s)
            || self.bound_slope.dim() != (n, k, s)
            || self.bound_offset.dim() != (n, k, s)
            || self.xi.dim() != (n, k)
            || self.chi.dim() != (m, n)
        {
            return Err(Error::Config("weight/coefficient shapes mismatch".into()));
        }
        if self
            .zeta
            .iter()
            .chain(self.xi.iter())
            .chain(self.chi.iter())
            .any(|w| !w.is_finite() || *w <= 0.0)
        {
            return Err(Error::Config(
                "reweighting coefficients must be finite and > 0".into(),
            ));
        }
        if self
            .bound_slope
            .iter()
            .any(|a| !a.is_finite() || *a <= 0.0 || *a > 1.0)
        {
            return Err(Error::Config("rate-bound slopes must lie in (0, 1]".into()));
        }
        if self.bound_offset.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("rate-bound offsets must be finite".into()));
        }
        for (name, v) in [
            ("ue_max_power_w", self.ue_max_power_w),
            ("bs_max_power_w", self.bs_max_power_w),
            ("leo_bandwidth_hz", self.leo_bandwidth_hz),
            ("ts_duration_s", self.ts_duration_s),
            ("sc_bandwidth_hz", self.sc_bandwidth_hz),
            ("noise_per_sc_w", self.noise_per_sc_w),
            ("noise_density_w_hz", self.noise_density_w_hz),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_sc_per_ue == 0 || self.max_sc_per_ue > s {
            return Err(Error::Config(format!(
                "max_sc_per_ue must lie in 1..={s}"
            )));
        }
        if let BackhaulModel::Linearized {
            bs_power_w,
            bandwidth_hz,
        } = &self.backhaul_model
        {
            if bs_power_w.len() != n || bandwidth_hz.dim() != (m, n) {
                return Err(Error::Config(
                    "linearized backhaul expansion point has wrong shape".into(),
                ));
            }
        }
        if let Some(sup) = &self.ue_support {
            if sup.dim() != (n, k, s) {
                return Err(Error::Config("user support has the wrong shape".into()));
            }
        }
        if let Some(sup) = &self.bs_leo_support {
            if sup.dim() != (m, n) {
                return Err(Error::Config("backhaul support has the wrong shape".into()));
            }
        }
        Ok(())
    }
}

/// Concave lower bound coefficients for `log2(1 + x)` around `x_prev`:
/// `a log2(x) + b <= log2(1 + x)` with equality at `x_prev`.
pub fn scale_bound_coeffs(x_prev: f64) -> Result<(f64, f64)> {
    if !(x_prev > 0.0) || !x_prev.is_finite() {
        return Err(Error::Domain(format!(
            "rate-bound expansion point must be positive and finite, got {x_prev}"
        )));
    }
    let a = x_prev / (1.0 + x_prev);
    let b = (1.0 + x_prev).log2() - a * x_prev.log2();
    Ok((a, b))
}

/// Semantic variable counts of a built program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarCounts {
    /// Log-domain user powers (num_bs * num_ue * num_sc).
    pub ue_power_log: usize,
    /// BS backhaul powers.
    pub bs_power: usize,
    /// Backhaul bandwidths (num_leo * num_bs).
    pub bandwidth: usize,
    /// User epigraph rates (num_bs * num_ue).
    pub ue_rate: usize,
    /// BS epigraph rates.
    pub bs_rate: usize,
    /// Everything, including epigraph/cone auxiliaries.
    pub total: usize,
}

/// Variable layout inside the stacked decision vector.
#[derive(Debug, Clone)]
struct VarLayout {
    n_bs: usize,
    n_ue: usize,
    n_sc: usize,
    n_leo: usize,
    pbar0: usize,
    upow0: usize,
    pbs0: usize,
    wband0: usize,
    lue0: usize,
    lbs0: usize,
    rbh0: usize,
    /// Interference-log variable per (n, k, s); usize::MAX for users whose
    /// rate rows are not emitted.
    vint: Array3<usize>,
    n_vars: usize,
}

impl VarLayout {
    fn pbar(&self, n: usize, k: usize, s: usize) -> usize {
        self.pbar0 + (n * self.n_ue + k) * self.n_sc + s
    }
    fn upow(&self, n: usize, k: usize, s: usize) -> usize {
        self.upow0 + (n * self.n_ue + k) * self.n_sc + s
    }
    fn pbs(&self, n: usize) -> usize {
        self.pbs0 + n
    }
    fn wband(&self, m: usize, n: usize) -> usize {
        self.wband0 + m * self.n_bs + n
    }
    fn lue(&self, n: usize, k: usize) -> usize {
        self.lue0 + n * self.n_ue + k
    }
    fn lbs(&self, n: usize) -> usize {
        self.lbs0 + n
    }
    fn rbh(&self, m: usize, n: usize) -> usize {
        self.rbh0 + m * self.n_bs + n
    }
}

/// A subproblem lowered to solver canonical form
/// (min q'x  s.t.  b - Ax in K), plus the metadata needed to lift the
/// solution back to physical units.
pub struct ConicProgram {
    a_mat: CscMatrix<f64>,
    b: Vec<f64>,
    q: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    layout: VarLayout,
    /// Rate unit: T_S * W_SC bits.
    lambda_scale: f64,
    /// Bandwidth unit: the satellite band, Hz.
    w_scale: f64,
    weights_bits: Vec<f64>,
    n_exp_cones: usize,
    n_lin_rows: usize,
    n_zero_rows: usize,
    /// Eliminated user links; their extracted power reads exactly zero.
    cut_ue: Array3<bool>,
    /// Eliminated satellite-BS pairs; extracted bandwidth reads zero.
    cut_bh: Array2<bool>,
}

impl ConicProgram {
    pub fn num_vars(&self) -> usize {
        self.layout.n_vars
    }
    pub fn num_rows(&self) -> usize {
        self.b.len()
    }
    pub fn num_exp_cones(&self) -> usize {
        self.n_exp_cones
    }
    pub fn num_linear_rows(&self) -> usize {
        self.n_lin_rows
    }
    pub fn num_equality_rows(&self) -> usize {
        self.n_zero_rows
    }

    pub fn counts(&self) -> VarCounts {
        let l = &self.layout;
        VarCounts {
            ue_power_log: l.n_bs * l.n_ue * l.n_sc,
            bs_power: l.n_bs,
            bandwidth: l.n_leo * l.n_bs,
            ue_rate: l.n_bs * l.n_ue,
            bs_rate: l.n_bs,
            total: l.n_vars,
        }
    }
}

/// Row-wise builder for the canonical form.  Rows are collected in three
/// groups (equalities, inequalities, exponential-cone triples) and stacked
/// in that order, matching the cone list handed to the solver.
#[derive(Default)]
struct RowStack {
    rows: Vec<(Vec<(usize, f64)>, f64)>,
}

impl RowStack {
    fn push(&mut self, entries: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push((entries, rhs));
    }
    fn len(&self) -> usize {
        self.rows.len()
    }
}

/// Lower a subproblem spec to conic canonical form.
pub fn build_subproblem(spec: &SubproblemSpec) -> Result<ConicProgram> {
    spec.validate()?;
    let (n_bs, n_ue, n_sc, n_leo) = spec.dims();
    let nks = n_bs * n_ue * n_sc;
    let active: Vec<bool> = spec.weights_bits.iter().map(|&w| w > 0.0).collect();
    // a present support hard-eliminates everything outside it, including
    // the links of finished users; without one, finished users only lose
    // their rate rows and keep their power variables as interferers
    let cut_ue = Array3::from_shape_fn((n_bs, n_ue, n_sc), |(n, k, s)| {
        match &spec.ue_support {
            Some(sup) => !sup[[n, k, s]] || !active[k],
            None => false,
        }
    });
    let cut_bh = Array2::from_shape_fn((n_leo, n_bs), |(m, n)| match &spec.bs_leo_support {
        Some(sup) => !sup[[m, n]],
        None => false,
    });

    // ---- variable layout ----------------------------------------------
    let pbar0 = 0;
    let upow0 = pbar0 + nks;
    let pbs0 = upow0 + nks;
    let wband0 = pbs0 + n_bs;
    let lue0 = wband0 + n_leo * n_bs;
    let lbs0 = lue0 + n_bs * n_ue;
    let rbh0 = lbs0 + n_bs;
    let mut next = rbh0 + n_leo * n_bs;

    let mut vint = Array3::from_elem((n_bs, n_ue, n_sc), usize::MAX);
    // (n, k, s, first e-var index, co-channel interfering links (i, j)):
    // every other user's surviving transmission on s, to whichever BS,
    // interferes at BS n through that user's channel towards n
    let mut lse_aux: Vec<(usize, usize, usize, usize, Vec<(usize, usize)>)> = Vec::new();
    for n in 0..n_bs {
        for k in 0..n_ue {
            if !active[k] {
                continue;
            }
            for s in 0..n_sc {
                if cut_ue[[n, k, s]] {
                    continue;
                }
                let mut inter: Vec<(usize, usize)> = Vec::new();
                for j in 0..n_ue {
                    if j == k {
                        continue;
                    }
                    for i in 0..n_bs {
                        if !cut_ue[[i, j, s]] {
                            inter.push((i, j));
                        }
                    }
                }
                vint[[n, k, s]] = next;
                next += 1;
                let e0 = next;
                next += 1 + inter.len(); // the noise term plus one per interfering link
                lse_aux.push((n, k, s, e0, inter));
            }
        }
    }
    let layout = VarLayout {
        n_bs,
        n_ue,
        n_sc,
        n_leo,
        pbar0,
        upow0,
        pbs0,
        wband0,
        lue0,
        lbs0,
        rbh0,
        vint,
        n_vars: next,
    };

    let lambda_scale = spec.ts_duration_s * spec.sc_bandwidth_hz;
    let w_scale = spec.leo_bandwidth_hz;
    let ln2 = std::f64::consts::LN_2;

    // power floor: small enough to stay strictly inside even degenerate
    // power caps, never above the configured conditioning floor
    let p_floor = POWER_FLOOR_W.min(spec.ue_max_power_w * 1e-3 / (n_bs * n_sc) as f64);
    let pbar_floor = p_floor.ln();

    // ---- equality rows -------------------------------------------------
    let mut eq = RowStack::default();
    // a user with no surviving link at a BS sends nothing through it
    for k in 0..n_ue {
        for n in 0..n_bs {
            let has_link = (0..n_sc).any(|s| layout.vint[[n, k, s]] != usize::MAX);
            if !has_link {
                eq.push(vec![(layout.lue(n, k), 1.0)], 0.0);
            }
        }
    }
    // eliminated links and pairs are fixed rather than left free
    for n in 0..n_bs {
        for k in 0..n_ue {
            for s in 0..n_sc {
                if cut_ue[[n, k, s]] {
                    eq.push(vec![(layout.pbar(n, k, s), 1.0)], pbar_floor);
                    eq.push(vec![(layout.upow(n, k, s), 1.0)], 0.0);
                }
            }
        }
    }
    for m in 0..n_leo {
        for n in 0..n_bs {
            if cut_bh[[m, n]] {
                eq.push(vec![(layout.wband(m, n), 1.0)], 0.0);
                if matches!(spec.backhaul_model, BackhaulModel::Cone) {
                    eq.push(vec![(layout.rbh(m, n), 1.0)], 0.0);
                }
            }
        }
    }
    // with the linearized backhaul the cone rate variables are unused; pin
    // them so no free column remains
    if matches!(spec.backhaul_model, BackhaulModel::Linearized { .. }) {
        for m in 0..n_leo {
            for n in 0..n_bs {
                eq.push(vec![(layout.rbh(m, n), 1.0)], 0.0);
            }
        }
    }

    // ---- inequality rows (c'x <= rhs) ----------------------------------
    let mut lin = RowStack::default();

    // each (BS, sub-channel) carries at most one user's worth of weighted
    // power occupancy
    for n in 0..n_bs {
        for s in 0..n_sc {
            let entries: Vec<_> = (0..n_ue)
                .filter(|&k| !cut_ue[[n, k, s]])
                .map(|k| (layout.upow(n, k, s), spec.zeta[[n, k, s]]))
                .collect();
            if !entries.is_empty() {
                lin.push(entries, 1.0);
            }
        }
    }
    // per-user sub-channel budget at its BS
    for n in 0..n_bs {
        for k in 0..n_ue {
            let entries: Vec<_> = (0..n_sc)
                .filter(|&s| !cut_ue[[n, k, s]])
                .map(|s| (layout.upow(n, k, s), spec.zeta[[n, k, s]]))
                .collect();
            if !entries.is_empty() {
                lin.push(entries, spec.max_sc_per_ue as f64);
            }
        }
    }
    // each user concentrates on one BS
    for k in 0..n_ue {
        let mut entries = Vec::with_capacity(n_bs * n_sc);
        for n in 0..n_bs {
            for s in 0..n_sc {
                if !cut_ue[[n, k, s]] {
                    entries.push((layout.upow(n, k, s), spec.xi[[n, k]]));
                }
            }
        }
        if !entries.is_empty() {
            lin.push(entries, 1.0);
        }
    }
    // per-user power budget
    for k in 0..n_ue {
        let mut entries = Vec::with_capacity(n_bs * n_sc);
        for n in 0..n_bs {
            for s in 0..n_sc {
                if !cut_ue[[n, k, s]] {
                    entries.push((layout.upow(n, k, s), 1.0));
                }
            }
        }
        if !entries.is_empty() {
            lin.push(entries, spec.ue_max_power_w);
        }
    }
    // each BS concentrates on one satellite
    for n in 0..n_bs {
        let entries: Vec<_> = (0..n_leo)
            .filter(|&m| !cut_bh[[m, n]])
            .map(|m| (layout.wband(m, n), spec.chi[[m, n]] * w_scale))
            .collect();
        if !entries.is_empty() {
            lin.push(entries, 1.0);
        }
    }
    // satellite band budget (bandwidths are in units of the band)
    for m in 0..n_leo {
        let entries: Vec<_> = (0..n_bs)
            .filter(|&n| !cut_bh[[m, n]])
            .map(|n| (layout.wband(m, n), 1.0))
            .collect();
        if !entries.is_empty() {
            lin.push(entries, 1.0);
        }
    }
    // BS power box
    for n in 0..n_bs {
        lin.push(vec![(layout.pbs(n), 1.0)], spec.bs_max_power_w);
        lin.push(vec![(layout.pbs(n), -1.0)], 0.0);
    }
    // bandwidth non-negativity
    for m in 0..n_leo {
        for n in 0..n_bs {
            lin.push(vec![(layout.wband(m, n), -1.0)], 0.0);
        }
    }
    // log-power floor
    for idx in 0..nks {
        lin.push(vec![(pbar0 + idx, -1.0)], -pbar_floor);
    }
    // BS epigraph rate is non-negative
    for n in 0..n_bs {
        lin.push(vec![(layout.lbs(n), -1.0)], 0.0);
    }
    // optional diagnostic floor on the BS rates
    if let Some(floor_bits) = spec.lambda_bs_floor_bits {
        let floor_hat = floor_bits / lambda_scale;
        for n in 0..n_bs {
            lin.push(vec![(layout.lbs(n), -1.0)], -floor_hat);
        }
    }
    // per-BS load split: user rates within backhaul rate
    for n in 0..n_bs {
        let mut entries: Vec<(usize, f64)> =
            (0..n_ue).map(|k| (layout.lue(n, k), 1.0)).collect();
        entries.push((layout.lbs(n), -1.0));
        lin.push(entries, 0.0);
    }
    // access-rate epigraph per (BS, user) with surviving links: lambda
    // below the concave bound summed over those links
    for n in 0..n_bs {
        for k in 0..n_ue {
            let mut entries = vec![(layout.lue(n, k), 1.0)];
            let mut rhs = 0.0;
            let mut any = false;
            for s in 0..n_sc {
                if layout.vint[[n, k, s]] == usize::MAX {
                    continue;
                }
                any = true;
                let a = spec.bound_slope[[n, k, s]];
                let b = spec.bound_offset[[n, k, s]];
                let h = spec.access_gain[[n, k, s]].max(MIN_GAIN);
                entries.push((layout.pbar(n, k, s), -a / ln2));
                entries.push((layout.vint[[n, k, s]], a / ln2));
                rhs += a * h.log2() + b;
            }
            if any {
                lin.push(entries, rhs);
            }
        }
    }
    // log-sum-exp epigraph: the exponential terms of each interference log
    // sum to at most one
    for &(_, _, _, e0, ref inter) in &lse_aux {
        let entries = (0..=inter.len()).map(|j| (e0 + j, 1.0)).collect();
        lin.push(entries, 1.0);
    }
    // backhaul rate epigraph
    match &spec.backhaul_model {
        BackhaulModel::Cone => {
            // lambda_bs (in rate units) below the summed cone rates (in
            // band units of nats)
            let c_rate = w_scale / (spec.sc_bandwidth_hz * ln2);
            for n in 0..n_bs {
                let mut entries = vec![(layout.lbs(n), 1.0)];
                for m in 0..n_leo {
                    if !cut_bh[[m, n]] {
                        entries.push((layout.rbh(m, n), -c_rate));
                    }
                }
                lin.push(entries, 0.0);
            }
        }
        BackhaulModel::Linearized {
            bs_power_w,
            bandwidth_hz,
        } => {
            // first-order model of W log2(1 + g P / (W delta)) around the
            // expansion point, in bits/s; exact at the point itself
            let t_over_l = spec.ts_duration_s / lambda_scale;
            for n in 0..n_bs {
                let mut entries = vec![(layout.lbs(n), 1.0)];
                let mut rhs = 0.0;
                for m in 0..n_leo {
                    if cut_bh[[m, n]] {
                        continue;
                    }
                    let g = spec.backhaul_gain[[m, n]].max(MIN_GAIN);
                    let c0 = g / spec.noise_density_w_hz;
                    let p0 = bs_power_w[n].max(1e-9);
                    let w0 = bandwidth_hz[[m, n]].max(1e-6 * w_scale);
                    let z = c0 * p0 / w0;
                    let f0 = w0 * (1.0 + z).ln() / ln2;
                    let dfdp = c0 / (ln2 * (1.0 + z));
                    let dfdw = ((1.0 + z).ln() - z / (1.0 + z)) / ln2;
                    entries.push((layout.pbs(n), -t_over_l * dfdp));
                    entries.push((layout.wband(m, n), -t_over_l * dfdw * w_scale));
                    rhs += t_over_l * (f0 - dfdp * p0 - dfdw * w0);
                }
                lin.push(entries, rhs);
            }
        }
    }

    // ---- exponential cones ---------------------------------------------
    // each cone contributes rows (s1, s2, s3) with s2 e^{s1/s2} <= s3
    let mut exp = RowStack::default();
    let mut n_exp = 0usize;

    // u >= exp(p_bar); eliminated links are equality-pinned instead
    for n in 0..n_bs {
        for k in 0..n_ue {
            for s in 0..n_sc {
                if cut_ue[[n, k, s]] {
                    continue;
                }
                let idx = (n * n_ue + k) * n_sc + s;
                exp.push(vec![(pbar0 + idx, -1.0)], 0.0);
                exp.push(vec![], 1.0);
                exp.push(vec![(upow0 + idx, -1.0)], 0.0);
                n_exp += 1;
            }
        }
    }
    // interference log epigraphs: the noise term first, then one term per
    // surviving co-channel interfering link (i, j), received through the
    // interfering user's channel towards BS n
    for &(n, k, s, e0, ref inter) in &lse_aux {
        let v = layout.vint[[n, k, s]];
        exp.push(vec![(v, 1.0)], spec.noise_per_sc_w.ln());
        exp.push(vec![], 1.0);
        exp.push(vec![(e0, -1.0)], 0.0);
        n_exp += 1;
        for (t, &(i, j)) in inter.iter().enumerate() {
            let h = spec.access_gain[[n, j, s]].max(MIN_GAIN);
            exp.push(vec![(layout.pbar(i, j, s), -1.0), (v, 1.0)], h.ln());
            exp.push(vec![], 1.0);
            exp.push(vec![(e0 + 1 + t, -1.0)], 0.0);
            n_exp += 1;
        }
    }
    // backhaul perspective-log cones
    if matches!(spec.backhaul_model, BackhaulModel::Cone) {
        for m in 0..n_leo {
            for n in 0..n_bs {
                if cut_bh[[m, n]] {
                    continue;
                }
                let g = spec.backhaul_gain[[m, n]].max(MIN_GAIN);
                let c_hat = g / (spec.noise_density_w_hz * w_scale);
                exp.push(vec![(layout.rbh(m, n), -1.0)], 0.0);
                exp.push(vec![(layout.wband(m, n), -1.0)], 0.0);
                exp.push(
                    vec![(layout.wband(m, n), -1.0), (layout.pbs(n), -c_hat)],
                    0.0,
                );
                n_exp += 1;
            }
        }
    }

    // ---- objective ------------------------------------------------------
    let w_max = spec
        .weights_bits
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut q = vec![0.0; layout.n_vars];
    for n in 0..n_bs {
        for k in 0..n_ue {
            if active[k] {
                q[layout.lue(n, k)] = -spec.weights_bits[k] / w_max;
            }
        }
    }

    // ---- stack all rows into CSC ---------------------------------------
    let n_zero_rows = eq.len();
    let n_lin_rows = lin.len();
    let total_rows = n_zero_rows + n_lin_rows + exp.len();
    let mut b = Vec::with_capacity(total_rows);
    let mut ti = Vec::new();
    let mut tj = Vec::new();
    let mut tv = Vec::new();
    for stack in [&eq, &lin, &exp] {
        for (entries, rhs) in &stack.rows {
            let row = b.len();
            b.push(*rhs);
            for &(col, val) in entries {
                ti.push(row);
                tj.push(col);
                tv.push(val);
            }
        }
    }
    let a_mat = CscMatrix::new_from_triplets(total_rows, layout.n_vars, ti, tj, tv);

    let mut cones = Vec::with_capacity(2 + n_exp);
    if n_zero_rows > 0 {
        cones.push(ZeroConeT(n_zero_rows));
    }
    cones.push(NonnegativeConeT(n_lin_rows));
    for _ in 0..n_exp {
        cones.push(ExponentialConeT());
    }

    Ok(ConicProgram {
        a_mat,
        b,
        q,
        cones,
        layout,
        lambda_scale,
        w_scale,
        weights_bits: spec.weights_bits.clone(),
        n_exp_cones: n_exp,
        n_lin_rows,
        n_zero_rows,
        cut_ue,
        cut_bh,
    })
}

/// Numeric settings for one conic solve.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Relative duality-gap target.
    pub rel_gap_tol: f64,
    /// Absolute duality-gap target.
    pub abs_gap_tol: f64,
    /// Primal/dual residual target.
    pub feas_tol: f64,
    /// Interior-point iteration cap.
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_gap_tol: 1e-7,
            abs_gap_tol: 1e-8,
            feas_tol: 1e-7,
            max_iter: 200,
            verbose: false,
        }
    }
}

/// Solver verdict mapped to the four states the outer loop distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_usable(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

/// Solution of one subproblem, lifted back to physical units.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub status: SolveStatus,
    /// Weighted epigraph objective, sum_k w_k * sum_n lambda_(n,k), in
    /// bits * bits.
    pub objective: f64,
    /// Log-domain user powers (natural log of watts), shape (n_bs, n_ue, n_sc).
    pub ue_power_log: Array3<f64>,
    /// User powers in watts (exp of the above).
    pub ue_power_w: Array3<f64>,
    /// BS backhaul powers, watts.
    pub bs_power_w: Vec<f64>,
    /// Backhaul bandwidths, Hz, shape (n_leo, n_bs).
    pub bandwidth_hz: Array2<f64>,
    /// Per-(BS, user) epigraph rates, bits.
    pub ue_rate_bits: Array2<f64>,
    /// Per-BS epigraph rates, bits.
    pub bs_rate_bits: Vec<f64>,
    pub solver_iterations: u32,
    pub solve_time_s: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Solve a built program with Clarabel.
pub fn solve(prog: &ConicProgram, opts: &SolverOptions) -> Result<SubproblemSolution> {
    let settings = DefaultSettings {
        verbose: opts.verbose,
        max_iter: opts.max_iter,
        tol_gap_abs: opts.abs_gap_tol,
        tol_gap_rel: opts.rel_gap_tol,
        tol_feas: opts.feas_tol,
        ..DefaultSettings::default()
    };
    let p_mat = CscMatrix::zeros((prog.layout.n_vars, prog.layout.n_vars));
    let mut solver = DefaultSolver::new(
        &p_mat,
        &prog.q,
        &prog.a_mat,
        &prog.b,
        &prog.cones,
        settings,
    )
    .map_err(|e| Error::Solver(format!("solver rejected program: {e:?}")))?;
    let debug_solve = std::env::var_os("ISTN_DEBUG_SOLVE").is_some();
    if debug_solve {
        eprintln!(
            "[build] vars={} rows={} exp={} nnz={}",
            prog.layout.n_vars,
            prog.b.len(),
            prog.n_exp_cones,
            prog.a_mat.nzval.len(),
        );
    }
    let t0 = std::time::Instant::now();
    solver.solve();
    if debug_solve {
        eprintln!(
            "[solve] vars={} rows={} exp={} status={:?} iters={} time={:.2}s",
            prog.layout.n_vars,
            prog.b.len(),
            prog.n_exp_cones,
            solver.solution.status,
            solver.solution.iterations,
            t0.elapsed().as_secs_f64(),
        );
    }

    let status = match solver.solution.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::NearOptimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        _ => SolveStatus::NumericalFailure,
    };

    let l = &prog.layout;
    let x = &solver.solution.x;
    let mut ue_power_log = Array3::zeros((l.n_bs, l.n_ue, l.n_sc));
    let mut ue_power_w = Array3::zeros((l.n_bs, l.n_ue, l.n_sc));
    for n in 0..l.n_bs {
        for k in 0..l.n_ue {
            for s in 0..l.n_sc {
                let pb = x[l.pbar(n, k, s)];
                ue_power_log[[n, k, s]] = pb;
                ue_power_w[[n, k, s]] = if prog.cut_ue[[n, k, s]] { 0.0 } else { pb.exp() };
            }
        }
    }
    let bs_power_w: Vec<f64> = (0..l.n_bs).map(|n| x[l.pbs(n)].max(0.0)).collect();
    let mut bandwidth_hz = Array2::zeros((l.n_leo, l.n_bs));
    for m in 0..l.n_leo {
        for n in 0..l.n_bs {
            bandwidth_hz[[m, n]] = if prog.cut_bh[[m, n]] {
                0.0
            } else {
                (x[l.wband(m, n)] * prog.w_scale).max(0.0)
            };
        }
    }
    let mut ue_rate_bits = Array2::zeros((l.n_bs, l.n_ue));
    for n in 0..l.n_bs {
        for k in 0..l.n_ue {
            ue_rate_bits[[n, k]] = x[l.lue(n, k)] * prog.lambda_scale;
        }
    }
    let bs_rate_bits: Vec<f64> = (0..l.n_bs)
        .map(|n| x[l.lbs(n)] * prog.lambda_scale)
        .collect();

    let mut objective = 0.0;
    for k in 0..l.n_ue {
        let total_rate: f64 = (0..l.n_bs).map(|n| ue_rate_bits[[n, k]]).sum();
        objective += prog.weights_bits[k] * total_rate;
    }

    Ok(SubproblemSolution {
        status,
        objective,
        ue_power_log,
        ue_power_w,
        bs_power_w,
        bandwidth_hz,
        ue_rate_bits,
        bs_rate_bits,
        solver_iterations: solver.solution.iterations,
        solve_time_s: solver.solution.solve_time,
        primal_residual: solver.solution.r_prim,
        dual_residual: solver.solution.r_dual,
    })
}
