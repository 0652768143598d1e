//! Brute-force checks of the two assistance-optimality results: the
//! optimal blend rises as belief concentrates or constraints tighten, and
//! optimizing against the full belief never has more regret than committing
//! to the MAP goal.

use crate::belief::{argmax, entropy, golden_section_max};
use crate::geom::Vec2;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRID_STEP: f64 = 1e-4;
/// Half-width of the final three-point parabolic polish.
const POLISH_STEP: f64 = 1e-3;
const GOLDEN_ITERATIONS: usize = 60;
/// Slack for numerical monotonicity and sign checks.
pub const CHECK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("utility is not finite at gamma = {gamma}")]
    NonFinite { gamma: f64 },
    #[error("belief has {found} entries for {expected} goals")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Concrete progress/constraint geometry: `a(g) = (1-g)h + g w_goal` applied
/// at `cursor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub cursor: Vec2,
    pub human: Vec2,
    pub goals: Vec<Vec2>,
    pub expert: Vec<Vec2>,
    pub obstacle: Vec2,
    pub obstacle_radius: f64,
    pub d_safe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum UtilityForm {
    /// `U_g = -alpha_g (g - m_g)^2 - beta_g (1 - g)^2`.
    Quadratic { modes: Vec<f64> },
    /// `U_g = -alpha_g |x + a - goal|^2 - beta_g exp(-dist(x + a, obstacle) / d_safe)`.
    ProgressConstraint { fixture: Fixture },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityFamily {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub form: UtilityForm,
}

impl UtilityFamily {
    pub fn quadratic(modes: Vec<f64>, alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        Self {
            alpha,
            beta,
            form: UtilityForm::Quadratic { modes },
        }
    }

    /// Pure `-(g - m_g)^2` utilities.
    pub fn centered(modes: &[f64]) -> Self {
        let n = modes.len();
        Self::quadratic(modes.to_vec(), vec![1.0; n], vec![0.0; n])
    }

    pub fn progress_constraint(fixture: Fixture, alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        Self {
            alpha,
            beta,
            form: UtilityForm::ProgressConstraint { fixture },
        }
    }

    pub fn goal_count(&self) -> usize {
        self.alpha.len()
    }

    pub fn name(&self) -> &'static str {
        match self.form {
            UtilityForm::Quadratic { .. } => "quadratic",
            UtilityForm::ProgressConstraint { .. } => "progress_constraint",
        }
    }

    pub fn utility(&self, goal: usize, gamma: f64) -> f64 {
        let (a, b) = (self.alpha[goal], self.beta[goal]);
        match &self.form {
            UtilityForm::Quadratic { modes } => {
                -a * (gamma - modes[goal]).powi(2) - b * (1.0 - gamma).powi(2)
            }
            UtilityForm::ProgressConstraint { fixture: f } => {
                let p = f.cursor + f.human * (1.0 - gamma) + f.expert[goal] * gamma;
                let dist = p.distance(f.obstacle) - f.obstacle_radius;
                -a * (p - f.goals[goal]).norm_sq() - b * (-dist / f.d_safe).exp()
            }
        }
    }

    /// Belief-weighted utility.
    pub fn expected(&self, belief: &[f64], gamma: f64) -> f64 {
        belief.iter().enumerate().map(|(g, p)| p * self.utility(g, gamma)).sum()
    }

    /// Same family with every constraint weight multiplied by `scale`.
    pub fn scaled_constraint(&self, scale: f64) -> Self {
        let mut out = self.clone();
        out.beta.iter_mut().for_each(|b| *b *= scale);
        out
    }

    /// `|U_g''|`, exact for the quadratic form.
    pub fn quadratic_curvature(&self, goal: usize) -> Option<f64> {
        match self.form {
            UtilityForm::Quadratic { .. } => Some(2.0 * (self.alpha[goal] + self.beta[goal])),
            _ => None,
        }
    }
}

/// Maximizer of `f` on `[0, 1]`: dense grid, golden section inside the
/// bracketing cells, then a parabolic polish that is exact for quadratics.
/// Ties on the grid go to the lowest gamma.
pub fn maximize_unit(f: impl Fn(f64) -> f64) -> Result<f64, TheoryError> {
    let n = (1.0 / GRID_STEP).round() as usize;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for i in 0..=n {
        let g = i as f64 * GRID_STEP;
        let v = f(g);
        if !v.is_finite() {
            return Err(TheoryError::NonFinite { gamma: g });
        }
        if v > best.0 {
            best = (v, i);
        }
    }
    let i = best.1;
    let lo = i.saturating_sub(1) as f64 * GRID_STEP;
    let hi = ((i + 1).min(n)) as f64 * GRID_STEP;
    let mut x = golden_section_max(lo, hi, GOLDEN_ITERATIONS, &f);
    let mut fx = f(x);
    for end in [0.0, 1.0] {
        let v = f(end);
        if v > fx || (v == fx && end < x) {
            x = end;
            fx = v;
        }
    }
    for _ in 0..2 {
        let a = (x - POLISH_STEP).clamp(0.0, 1.0 - 2.0 * POLISH_STEP);
        let (b, c) = (a + POLISH_STEP, a + 2.0 * POLISH_STEP);
        let (fa, fb, fc) = (f(a), f(b), f(c));
        let curv = fa - 2.0 * fb + fc;
        if curv >= 0.0 {
            break;
        }
        let cand = (b - POLISH_STEP * (fc - fa) / (2.0 * curv)).clamp(0.0, 1.0);
        let fcand = f(cand);
        // Near the peak the golden-section point and the vertex differ by
        // less than rounding in f, so accept ties at that resolution.
        if fcand >= fx - 1e-14 * (1.0 + fx.abs()) {
            x = cand;
            fx = fcand;
        }
    }
    Ok(x)
}

/// Assistance level maximizing the belief-weighted utility.
pub fn optimal_gamma(belief: &[f64], family: &UtilityFamily) -> Result<f64, TheoryError> {
    if belief.len() != family.goal_count() {
        return Err(TheoryError::DimensionMismatch {
            expected: family.goal_count(),
            found: belief.len(),
        });
    }
    maximize_unit(|g| family.expected(belief, g))
}

pub fn per_goal_optima(family: &UtilityFamily) -> Result<Vec<f64>, TheoryError> {
    (0..family.goal_count())
        .map(|g| maximize_unit(|x| family.utility(g, x)))
        .collect()
}

/// Belief with `lambda + (1 - lambda)/n` on `true_goal`, the rest spread evenly.
pub fn certainty_belief(n: usize, true_goal: usize, lambda: f64) -> Vec<f64> {
    let base = (1.0 - lambda) / n as f64;
    (0..n).map(|g| if g == true_goal { lambda + base } else { base }).collect()
}

/// Expected regret `E_g[U_g(g*_g) - U_g(gamma)]`.
pub fn regret(family: &UtilityFamily, belief: &[f64], optima: &[f64], gamma: f64) -> f64 {
    belief
        .iter()
        .enumerate()
        .map(|(g, p)| p * (family.utility(g, optima[g]) - family.utility(g, gamma)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub concave: bool,
    pub mixed_partial_nonnegative: bool,
    pub expert_efficiency: bool,
}

impl AssumptionCheck {
    pub fn passed(&self) -> bool {
        self.concave && self.mixed_partial_nonnegative && self.expert_efficiency
    }
}

/// Finite-difference checks on a 101-point grid: each `U_g` concave,
/// `d2U_g / dgamma dbeta_g >= 0`, and the true goal's marginal utility of
/// assistance at least the average across goals.
pub fn check_assumptions(family: &UtilityFamily, true_goal: usize) -> AssumptionCheck {
    let h = 1e-3;
    let n = family.goal_count();
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let slope = |fam: &UtilityFamily, g: usize, x: f64| {
        let (a, b) = ((x - h).max(0.0), (x + h).min(1.0));
        (fam.utility(g, b) - fam.utility(g, a)) / (b - a)
    };
    let concave = (0..n).all(|g| {
        grid.windows(3).all(|w| {
            let (a, b, c) = (family.utility(g, w[0]), family.utility(g, w[1]), family.utility(g, w[2]));
            a - 2.0 * b + c <= 1e-9 * (1.0 + b.abs())
        })
    });
    let bumped = |g: usize| {
        let mut f = family.clone();
        f.beta[g] += 1e-3;
        f
    };
    let mixed_partial_nonnegative = (0..n).all(|g| {
        let up = bumped(g);
        grid.iter().all(|&x| slope(&up, g, x) - slope(family, g, x) >= -1e-9)
    });
    let expert_efficiency = grid.iter().all(|&x| {
        let mean = (0..n).map(|g| slope(family, g, x)).sum::<f64>() / n as f64;
        slope(family, true_goal, x) >= mean - 1e-9
    });
    AssumptionCheck {
        concave,
        mixed_partial_nonnegative,
        expert_efficiency,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub entropy: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub scale: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub family: String,
    pub true_goal: usize,
    pub assumptions: AssumptionCheck,
    /// False when the assumptions fail; the sweeps are still recorded.
    pub asserted: bool,
    pub lambda_sweep: Vec<LambdaRow>,
    pub constraint_sweep: Vec<ConstraintRow>,
    pub violations: Vec<String>,
}

/// `points` evenly spaced values on `[0, 1]`.
pub fn lambda_grid(points: usize) -> Vec<f64> {
    (0..points).map(|i| i as f64 / (points - 1) as f64).collect()
}

/// Constraint multipliers from 1/4 to 4, geometric.
pub fn constraint_grid(points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| 4f64.powf(2.0 * i as f64 / (points - 1) as f64 - 1.0))
        .collect()
}

/// Runs both sweeps. The constraint sweep holds the belief at
/// `constraint_lambda`.
pub fn verify_monotonicity(
    family: &UtilityFamily,
    true_goal: usize,
    lambdas: &[f64],
    scales: &[f64],
    constraint_lambda: f64,
) -> Result<MonotonicityReport, TheoryError> {
    let n = family.goal_count();
    let assumptions = check_assumptions(family, true_goal);
    let mut violations = Vec::new();

    let mut lambda_sweep = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let b = certainty_belief(n, true_goal, lambda);
        lambda_sweep.push(LambdaRow {
            lambda,
            entropy: entropy(&b),
            gamma: optimal_gamma(&b, family)?,
        });
    }
    for w in lambda_sweep.windows(2) {
        if w[1].gamma < w[0].gamma - CHECK_TOLERANCE {
            violations.push(format!(
                "gamma* fell from {} to {} between lambda {} and {}",
                w[0].gamma, w[1].gamma, w[0].lambda, w[1].lambda
            ));
        }
        if w[1].lambda < 1.0 && w[1].entropy >= w[0].entropy {
            violations.push(format!("entropy not decreasing at lambda {}", w[1].lambda));
        }
    }

    let b = certainty_belief(n, true_goal, constraint_lambda);
    let mut constraint_sweep = Vec::with_capacity(scales.len());
    for &scale in scales {
        constraint_sweep.push(ConstraintRow {
            scale,
            gamma: optimal_gamma(&b, &family.scaled_constraint(scale))?,
        });
    }
    for w in constraint_sweep.windows(2) {
        if w[1].gamma < w[0].gamma - CHECK_TOLERANCE {
            violations.push(format!(
                "gamma* fell from {} to {} between constraint scale {} and {}",
                w[0].gamma, w[1].gamma, w[0].scale, w[1].scale
            ));
        }
    }

    Ok(MonotonicityReport {
        family: family.name().to_string(),
        true_goal,
        asserted: assumptions.passed(),
        assumptions,
        lambda_sweep,
        constraint_sweep,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceRow {
    pub goals: usize,
    pub gamma_map: f64,
    pub gamma_integrated: f64,
    pub regret_map: f64,
    pub regret_integrated: f64,
    /// Belief-weighted variance of the per-goal optima.
    pub dispersion: f64,
    /// `|gap - closed form|` for quadratics.
    pub identity_error: Option<f64>,
}

impl DominanceRow {
    pub fn gap(&self) -> f64 {
        self.regret_map - self.regret_integrated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub samples: usize,
    pub dominance_violations: usize,
    pub max_identity_error: f64,
    pub rows: Vec<DominanceRow>,
}

/// Regret of MAP commitment and of belief-integrated optimization for one
/// family and belief.
pub fn dominance_row(family: &UtilityFamily, belief: &[f64]) -> Result<DominanceRow, TheoryError> {
    let optima = per_goal_optima(family)?;
    let (_, map) = argmax(belief);
    let gamma_map = optima[map];
    let gamma_integrated = optimal_gamma(belief, family)?;
    let regret_map = regret(family, belief, &optima, gamma_map);
    let regret_integrated = regret(family, belief, &optima, gamma_integrated);
    let mean: f64 = belief.iter().zip(&optima).map(|(p, o)| p * o).sum();
    let dispersion = belief.iter().zip(&optima).map(|(p, o)| p * (o - mean).powi(2)).sum();
    let identity_error = (0..family.goal_count())
        .map(|g| family.quadratic_curvature(g))
        .collect::<Option<Vec<f64>>>()
        .map(|k| {
            let expansion = |gamma: f64| -> f64 {
                belief
                    .iter()
                    .enumerate()
                    .map(|(g, p)| 0.5 * p * k[g] * (optima[g] - gamma).powi(2))
                    .sum()
            };
            let closed = expansion(gamma_map) - expansion(gamma_integrated);
            ((regret_map - regret_integrated) - closed).abs()
        });
    Ok(DominanceRow {
        goals: family.goal_count(),
        gamma_map,
        gamma_integrated,
        regret_map,
        regret_integrated,
        dispersion,
        identity_error,
    })
}

/// Uniform-on-simplex belief via normalized exponentials.
pub fn random_belief<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v: f64| v / s).collect()
}

pub fn random_quadratic<R: Rng>(n: usize, rng: &mut R) -> UtilityFamily {
    UtilityFamily::quadratic(
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
        (0..n).map(|_| rng.random_range(0.5..2.0)).collect(),
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
}

/// Random quadratic families with 2 to 5 goals and random beliefs.
pub fn verify_regret_dominance<R: Rng>(samples: usize, rng: &mut R) -> Result<DominanceReport, TheoryError> {
    let mut rows = Vec::with_capacity(samples);
    for _ in 0..samples {
        let n = rng.random_range(2..=5);
        let family = random_quadratic(n, rng);
        let belief = random_belief(n, rng);
        rows.push(dominance_row(&family, &belief)?);
    }
    Ok(DominanceReport {
        samples,
        dominance_violations: rows
            .iter()
            .filter(|r| r.regret_map < r.regret_integrated - CHECK_TOLERANCE)
            .count(),
        max_identity_error: rows.iter().filter_map(|r| r.identity_error).fold(0.0, f64::max),
        rows,
    })
}

/// Monotonicity sweeps over `random` quadratic families plus the geometric
/// fixture. Each quadratic's true goal is the one with the steepest
/// marginal utility at `gamma = 0.5`.
pub fn monotonicity_suite<R: Rng>(random: usize, rng: &mut R) -> Result<Vec<MonotonicityReport>, TheoryError> {
    let lambdas = lambda_grid(51);
    let scales = constraint_grid(21);
    let mut out = Vec::with_capacity(random + 2);
    out.push(verify_monotonicity(&UtilityFamily::centered(&[0.9, 0.1]), 0, &lambdas, &scales, 0.5)?);
    let fixture = UtilityFamily::progress_constraint(obstacle_fixture(), vec![1.0; 3], vec![0.3; 3]);
    out.push(verify_monotonicity(&fixture, 0, &lambdas, &scales, 0.5)?);
    for _ in 0..random {
        let n = rng.random_range(2..=5);
        let f = random_quadratic(n, rng);
        let slope = |g: usize| f.utility(g, 0.5 + 1e-6) - f.utility(g, 0.5 - 1e-6);
        let true_goal = (0..n).fold(0, |best, g| if slope(g) > slope(best) { g } else { best });
        out.push(verify_monotonicity(&f, true_goal, &lambdas, &scales, 0.5)?);
    }
    Ok(out)
}

/// The geometric fixture used for the progress/constraint family: the
/// human drifts toward an obstacle while each goal's expert action steers
/// away from it.
pub fn obstacle_fixture() -> Fixture {
    Fixture {
        cursor: Vec2::ZERO,
        human: Vec2::new(0.5, 0.2),
        goals: vec![Vec2::new(0.9, 0.0), Vec2::new(0.2, 0.0), Vec2::new(0.5, 0.0)],
        expert: vec![Vec2::new(0.6, -0.2), Vec2::new(0.4, -0.2), Vec2::new(0.5, -0.3)],
        obstacle: Vec2::new(0.5, 0.6),
        obstacle_radius: 0.1,
        d_safe: 0.5,
    }
}
