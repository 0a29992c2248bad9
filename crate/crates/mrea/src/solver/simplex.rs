//! Dense two-phase primal simplex over bounded variables. Rows become
//! equalities via slacks; phase 1 drives per-row artificials to zero.
//! Nonbasic variables rest at a bound (or at zero when free), so bound
//! flips are ordinary iterations. Pivot selection is deterministic:
//! most negative reduced cost with lowest-index ties, switching to
//! Bland's rule after a run of degenerate steps.

use std::time::Instant;

use super::{LinearProgram, Relation, SolveOptions, SolveResult, SolveStatus};

const PIVOT_EPS: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const RATIO_TIE: f64 = 1e-12;
const DEGENERATE_LIMIT: u32 = 200;

pub(crate) fn solve_lp(lp: &LinearProgram, options: &SolveOptions) -> SolveResult {
    let lower: Vec<f64> = lp.variables.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = lp.variables.iter().map(|v| v.upper).collect();
    solve_bounded(lp, options, &lower, &upper, None)
}

/// Solve with overridden variable bounds (branch-and-bound tightens binaries
/// this way). `deadline` shares a global time budget across node solves.
pub(crate) fn solve_bounded(
    lp: &LinearProgram,
    options: &SolveOptions,
    lower: &[f64],
    upper: &[f64],
    deadline: Option<Instant>,
) -> SolveResult {
    assert_eq!(lower.len(), lp.variables.len());
    assert_eq!(upper.len(), lp.variables.len());
    for (&lo, &hi) in lower.iter().zip(upper) {
        if lo > hi {
            return SolveResult::failed(SolveStatus::Infeasible);
        }
    }
    Tableau::build(lp, lower, upper).run(lp, options, deadline)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Rest {
    Lower,
    Upper,
    Free,
}

struct Tableau {
    m: usize,
    ncols: usize,
    nstruct: usize,
    art_start: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// B^{-1} A, dense, including unit columns of basic variables.
    rows: Vec<Vec<f64>>,
    /// Current values of basic variables, row-aligned.
    beta: Vec<f64>,
    basic: Vec<usize>,
    basic_pos: Vec<Option<usize>>,
    rest: Vec<Rest>,
    val: Vec<f64>,
    /// Phase 1 and phase 2 reduced costs, pivoted alongside `rows`.
    d1: Vec<f64>,
    d2: Vec<f64>,
    rhs_scale: f64,
}

impl Tableau {
    fn build(lp: &LinearProgram, lower: &[f64], upper: &[f64]) -> Tableau {
        let nstruct = lp.variables.len();
        let m = lp.constraints.len();
        let nslack = m;
        let art_start = nstruct + nslack;
        let ncols = art_start + m;

        let mut lo = vec![0.0; ncols];
        let mut hi = vec![0.0; ncols];
        lo[..nstruct].copy_from_slice(lower);
        hi[..nstruct].copy_from_slice(upper);
        for (i, row) in lp.constraints.iter().enumerate() {
            let (slo, shi) = match row.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lo[nstruct + i] = slo;
            hi[nstruct + i] = shi;
            lo[art_start + i] = 0.0;
            hi[art_start + i] = f64::INFINITY;
        }

        let mut rest = vec![Rest::Free; ncols];
        let mut val = vec![0.0; ncols];
        for j in 0..art_start {
            if lo[j].is_finite() {
                rest[j] = Rest::Lower;
                val[j] = lo[j];
            } else if hi[j].is_finite() {
                rest[j] = Rest::Upper;
                val[j] = hi[j];
            }
        }

        // Dense structural+slack matrix, then orient each row so the
        // starting artificial value |residual| is nonnegative.
        let mut a = vec![vec![0.0; ncols]; m];
        let mut rhs_scale: f64 = 1.0;
        for (i, row) in lp.constraints.iter().enumerate() {
            for &(j, c) in &row.coeffs {
                a[i][j] += c;
            }
            a[i][nstruct + i] = 1.0;
            rhs_scale = rhs_scale.max(row.rhs.abs());
        }
        let mut beta = vec![0.0; m];
        let mut basic = vec![0usize; m];
        for (i, row) in lp.constraints.iter().enumerate() {
            let mut r = row.rhs;
            for j in 0..art_start {
                if a[i][j] != 0.0 {
                    r -= a[i][j] * val[j];
                }
            }
            if r < 0.0 {
                for v in a[i].iter_mut() {
                    *v = -*v;
                }
                r = -r;
            }
            a[i][art_start + i] = 1.0;
            beta[i] = r;
            basic[i] = art_start + i;
        }

        let mut basic_pos = vec![None; ncols];
        for (i, &b) in basic.iter().enumerate() {
            basic_pos[b] = Some(i);
        }

        let mut d1 = vec![0.0; ncols];
        for (j, dj) in d1.iter_mut().enumerate() {
            let c1 = if j >= art_start { 1.0 } else { 0.0 };
            let colsum: f64 = a.iter().map(|r| r[j]).sum();
            *dj = c1 - colsum;
        }
        let mut d2 = vec![0.0; ncols];
        for &(j, c) in &lp.objective {
            d2[j] += c;
        }

        Tableau {
            m,
            ncols,
            nstruct,
            art_start,
            lo,
            hi,
            rows: a,
            beta,
            basic,
            basic_pos,
            rest,
            val,
            d1,
            d2,
            rhs_scale,
        }
    }

    fn enterable(&self, j: usize, phase: u8) -> bool {
        if self.basic_pos[j].is_some() || self.lo[j] == self.hi[j] {
            return false;
        }
        // Artificials never re-enter once out of the basis.
        !(phase == 2 && j >= self.art_start)
    }

    /// Entering variable and its direction (+1 increase from lower/free,
    /// -1 decrease from upper/free), or None at a price optimum.
    fn price(&self, phase: u8, bland: bool) -> Option<(usize, f64)> {
        let d = if phase == 1 { &self.d1 } else { &self.d2 };
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.ncols {
            if !self.enterable(j, phase) {
                continue;
            }
            let dj = d[j];
            let cand = match self.rest[j] {
                Rest::Lower => (dj < -DUAL_TOL).then_some((j, 1.0, -dj)),
                Rest::Upper => (dj > DUAL_TOL).then_some((j, -1.0, dj)),
                Rest::Free => {
                    if dj < -DUAL_TOL {
                        Some((j, 1.0, -dj))
                    } else if dj > DUAL_TOL {
                        Some((j, -1.0, dj))
                    } else {
                        None
                    }
                }
            };
            if let Some((j, t, score)) = cand {
                if bland {
                    return Some((j, t));
                }
                if best.map_or(true, |(_, _, s)| score > s) {
                    best = Some((j, t, score));
                }
            }
        }
        best.map(|(j, t, _)| (j, t))
    }

    /// Max step for entering q in direction t and the blocking row, if any.
    fn ratio_test(&self, q: usize, t: f64, bland: bool) -> (f64, Option<usize>) {
        let mut delta = self.hi[q] - self.lo[q];
        let mut block: Option<usize> = None;
        let mut block_piv: f64 = 0.0;
        for i in 0..self.m {
            let y = self.rows[i][q];
            let e = t * y;
            let cap = if e > PIVOT_EPS {
                (self.beta[i] - self.lo[self.basic[i]]) / e
            } else if e < -PIVOT_EPS {
                (self.hi[self.basic[i]] - self.beta[i]) / (-e)
            } else {
                continue;
            };
            if !cap.is_finite() {
                continue;
            }
            let cap = cap.max(0.0);
            let take = if cap < delta - RATIO_TIE {
                true
            } else if cap <= delta + RATIO_TIE && block.is_some() {
                if bland {
                    self.basic[i] < self.basic[block.unwrap()]
                } else {
                    y.abs() > block_piv.abs()
                }
            } else {
                false
            };
            if take {
                delta = delta.min(cap).max(0.0);
                block = Some(i);
                block_piv = y;
            }
        }
        (delta, block)
    }

    fn apply_flip(&mut self, q: usize, t: f64, delta: f64) {
        for i in 0..self.m {
            let y = self.rows[i][q];
            if y != 0.0 {
                self.beta[i] -= t * y * delta;
            }
        }
        if t > 0.0 {
            self.rest[q] = Rest::Upper;
            self.val[q] = self.hi[q];
        } else {
            self.rest[q] = Rest::Lower;
            self.val[q] = self.lo[q];
        }
    }

    fn apply_pivot(&mut self, r: usize, q: usize, t: f64, delta: f64) {
        let leaving = self.basic[r];
        let y_r = self.rows[r][q];
        let entering_val = self.val[q] + t * delta;
        for i in 0..self.m {
            if i != r {
                let y = self.rows[i][q];
                if y != 0.0 {
                    self.beta[i] -= t * y * delta;
                }
            }
        }
        // The leaving variable lands on whichever of its bounds it hit. On a
        // degenerate swap (delta 0) the sign of the pivot says nothing, so
        // snap to the nearest finite bound instead.
        let hit_lower = if delta > 0.0 {
            t * y_r > 0.0
        } else {
            match (self.lo[leaving].is_finite(), self.hi[leaving].is_finite()) {
                (true, true) => {
                    self.beta[r] - self.lo[leaving] <= self.hi[leaving] - self.beta[r]
                }
                (false, true) => false,
                _ => true,
            }
        };
        if hit_lower {
            self.rest[leaving] = Rest::Lower;
            self.val[leaving] = self.lo[leaving];
        } else {
            self.rest[leaving] = Rest::Upper;
            self.val[leaving] = self.hi[leaving];
        }
        self.beta[r] = entering_val;
        self.basic[r] = q;
        self.basic_pos[leaving] = None;
        self.basic_pos[q] = Some(r);

        let piv = y_r;
        let inv = 1.0 / piv;
        for v in self.rows[r].iter_mut() {
            *v *= inv;
        }
        self.rows[r][q] = 1.0;
        let pivot_row = std::mem::take(&mut self.rows[r]);
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.rows[i][q];
            if f != 0.0 {
                let row = &mut self.rows[i];
                for (v, &p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[q] = 0.0;
            }
        }
        for (d, rowq) in [(&mut self.d1, q), (&mut self.d2, q)] {
            let f = d[rowq];
            if f != 0.0 {
                for (v, &p) in d.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                d[rowq] = 0.0;
            }
        }
        self.rows[r] = pivot_row;
    }

    fn phase1_infeasibility(&self) -> f64 {
        (0..self.m)
            .filter(|&i| self.basic[i] >= self.art_start)
            .map(|i| self.beta[i].max(0.0))
            .sum()
    }

    /// Swap basic zero-valued artificials for structural or slack columns
    /// so phase 2 prices only original variables. Rows with no usable pivot
    /// are redundant; their artificial stays basic at zero.
    fn evict_artificials(&mut self) {
        for r in 0..self.m {
            if self.basic[r] < self.art_start {
                continue;
            }
            let q = (0..self.art_start)
                .find(|&j| self.basic_pos[j].is_none() && self.rows[r][j].abs() > 1e-7);
            if let Some(q) = q {
                self.apply_pivot(r, q, 1.0, 0.0);
            }
        }
    }

    fn extract(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.nstruct];
        for (j, xj) in x.iter_mut().enumerate() {
            let raw = match self.basic_pos[j] {
                Some(i) => self.beta[i],
                None => self.val[j],
            };
            *xj = raw.clamp(
                if self.lo[j].is_finite() { self.lo[j] } else { raw },
                if self.hi[j].is_finite() { self.hi[j] } else { raw },
            );
        }
        x
    }

    fn run(
        mut self,
        lp: &LinearProgram,
        options: &SolveOptions,
        deadline: Option<Instant>,
    ) -> SolveResult {
        let start = Instant::now();
        let deadline = deadline
            .unwrap_or_else(|| start + std::time::Duration::from_secs_f64(options.time_limit.max(0.0)));
        let feas_tol = options.feasibility_tol * (1.0 + self.rhs_scale);
        let max_iters = 50_000 + 100 * (self.m + self.ncols);

        let mut phase: u8 = if self.m == 0 { 2 } else { 1 };
        let mut bland = false;
        let mut degenerate_run: u32 = 0;
        let mut iters = 0usize;

        loop {
            iters += 1;
            if iters > max_iters {
                log::warn!("simplex hit iteration cap after {iters} iterations");
                return SolveResult::failed(SolveStatus::NumericalFailure);
            }
            if (iters == 1 || iters % 64 == 0) && Instant::now() >= deadline {
                return SolveResult::failed(SolveStatus::TimeLimit);
            }

            let Some((q, t)) = self.price(phase, bland) else {
                if phase == 1 {
                    if self.phase1_infeasibility() > feas_tol {
                        return SolveResult::failed(SolveStatus::Infeasible);
                    }
                    self.evict_artificials();
                    phase = 2;
                    bland = false;
                    degenerate_run = 0;
                    continue;
                }
                let x = self.extract();
                let objective_value = lp.objective_value(&x);
                return SolveResult {
                    status: SolveStatus::Optimal,
                    objective_value,
                    primal_values: Some(x),
                    wall_time: 0.0,
                };
            };

            let (delta, block) = self.ratio_test(q, t, bland);
            if !delta.is_finite() {
                return if phase == 2 {
                    SolveResult::failed(SolveStatus::Unbounded)
                } else {
                    // Phase 1 objective is bounded below by zero, so an
                    // unbounded ray here means the arithmetic went bad.
                    SolveResult::failed(SolveStatus::NumericalFailure)
                };
            }
            if delta <= RATIO_TIE {
                degenerate_run += 1;
                if degenerate_run > DEGENERATE_LIMIT {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }
            match block {
                None => self.apply_flip(q, t, delta),
                Some(r) => self.apply_pivot(r, q, t, delta),
            }
        }
    }
}
