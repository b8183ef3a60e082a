//! Exact objectives, consistency bounds, and their randomized harnesses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{chain_graph, random_system, random_unstructured_system, RandomSystemSpec, TabularConditional, TabularSystem, ENUMERATION_CAP};
use crate::decoding::argmax;
use crate::error::{invalid, Error, Result};
use crate::graph::{Edge, Lang, TranslationGraph};

/// Numerical slack for every checked inequality.
pub const SLACK: f64 = 1e-9;

/// `eps / (log(1/xi) - delta * eps)`.
pub fn kappa(eps: f64, delta: f64, xi: f64) -> Result<f64> {
    let log_inv_xi = -xi.ln();
    let delta_eps = delta * eps;
    if !(log_inv_xi - delta_eps > 0.0) {
        return Err(Error::BoundUndefined { log_inv_xi, delta_eps });
    }
    Ok(eps / (log_inv_xi - delta_eps))
}

fn xlogy_neg(p: f64, q: f64) -> f64 {
    // -p log q with 0 log 0 = 0 and p > 0, q = 0 giving +inf
    if p == 0.0 {
        0.0
    } else {
        -p * q.ln()
    }
}

/// Exact `E_{x_s, x_t}[-log p_theta(x_t | x_s)]` under the truth.
pub fn exact_ce(sys: &TabularSystem, s: Lang, t: Lang) -> f64 {
    let n = sys.n();
    let joint = sys.marginal(&[s, t]);
    let model = sys.model(s, t);
    let mut ce = 0.0;
    for i in 0..n {
        for j in 0..n {
            ce += xlogy_neg(joint[i * n + j], model.get(i, j));
        }
    }
    ce
}

/// [`exact_ce`] restricted to zero-shot directions.
pub fn exact_zero_shot_ce(sys: &TabularSystem, (s, t): Edge) -> Result<f64> {
    if !sys.graph.zero_shot().contains(&(s, t)) {
        return Err(invalid(format!("{} is not a zero-shot direction", sys.graph.edge_label((s, t)))));
    }
    Ok(exact_ce(sys, s, t))
}

/// Agreement cross-entropy `-E_{x_a, x_b}[sum_z p(z | x_b) log p(z | x_a)]`:
/// the sample comes from the `b` side and is scored from the `a` side.
pub fn agreement_ce(sys: &TabularSystem, a: Lang, b: Lang, aux: Lang) -> f64 {
    let n = sys.n();
    let joint = sys.marginal(&[a, b]);
    let (pa, pb) = (sys.model(a, aux), sys.model(b, aux));
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = joint[i * n + j];
            if w == 0.0 {
                continue;
            }
            let inner: f64 = (0..n).map(|z| xlogy_neg(pb.get(j, z), pa.get(i, z))).sum();
            total += w * inner;
        }
    }
    total
}

/// Expected `KL(p(. | x_b) || p(. | x_a))` over parallel `(x_a, x_b)`.
pub fn distillation_kl(sys: &TabularSystem, a: Lang, b: Lang, aux: Lang) -> f64 {
    let n = sys.n();
    let joint = sys.marginal(&[a, b]);
    let (pa, pb) = (sys.model(a, aux), sys.model(b, aux));
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = joint[i * n + j];
            if w == 0.0 {
                continue;
            }
            let kl: f64 = (0..n).filter(|&z| pb.get(j, z) > 0.0).map(|z| pb.get(j, z) * (pb.get(j, z).ln() - pa.get(i, z).ln())).sum();
            total += w * kl;
        }
    }
    total
}

/// Supervised-side error levels of a system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorLevels {
    /// Largest of the supervised cross-entropies and agreement terms.
    pub epsilon_hat: f64,
    /// Largest supervised cross-entropy alone.
    pub max_supervised_ce: f64,
    /// Summed expected agreement-based loss over supervised pairs.
    pub epsilon_sum: f64,
}

pub fn error_levels(sys: &TabularSystem) -> ErrorLevels {
    let (mut eps, mut sup, mut sum) = (0.0f64, 0.0f64, 0.0);
    for (a, b) in sys.graph.supervised_pairs() {
        for (x, y) in [(a, b), (b, a)] {
            let ce = exact_ce(sys, x, y);
            sup = sup.max(ce);
            eps = eps.max(ce);
            sum += ce;
        }
        for c in sys.graph.languages().filter(|&c| c != a && c != b) {
            for (x, y) in [(a, b), (b, a)] {
                let ag = agreement_ce(sys, x, y, c);
                eps = eps.max(ag);
                sum += ag;
            }
        }
    }
    ErrorLevels { epsilon_hat: eps, max_supervised_ce: sup, epsilon_sum: sum }
}

/// Bounds on `E_{x_k | x_i, x_j}[p(x_i | x_j, x_k)]` over all ordered
/// language triples and positive-mass `(x_i, x_j)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub delta: f64,
    pub xi: f64,
    /// Zero-mass conditioning events passed over.
    pub skipped: usize,
}

fn triples(k: usize) -> Vec<[Lang; 3]> {
    let mut out = vec![];
    for i in 0..k {
        for j in (0..k).filter(|&j| j != i) {
            for l in (0..k).filter(|&l| l != i && l != j) {
                out.push([Lang(i), Lang(j), Lang(l)]);
            }
        }
    }
    out
}

pub fn assumption_constants(sys: &TabularSystem) -> Result<AssumptionConstants> {
    if sys.k() < 3 {
        return Err(invalid("the assumption needs three languages"));
    }
    let n = sys.n();
    let (mut delta, mut xi, mut skipped) = (f64::INFINITY, f64::NEG_INFINITY, 0);
    for [li, lj, lk] in triples(sys.k()) {
        let p = sys.marginal(&[li, lj, lk]);
        let pij = sys.marginal(&[li, lj]);
        let pjk = sys.marginal(&[lj, lk]);
        for i in 0..n {
            for j in 0..n {
                let w = pij[i * n + j];
                if w == 0.0 {
                    skipped += 1;
                    continue;
                }
                let e: f64 = (0..n)
                    .map(|k| {
                        let pijk = p[(i * n + j) * n + k];
                        if pijk == 0.0 {
                            0.0
                        } else {
                            (pijk / w) * (pijk / pjk[j * n + k])
                        }
                    })
                    .sum();
                delta = delta.min(e);
                xi = xi.max(e);
            }
        }
    }
    if !delta.is_finite() {
        return Err(invalid("truth has no positive-mass events"));
    }
    Ok(AssumptionConstants { delta, xi, skipped })
}

/// Source-pivot quality `max_{x_j, x_k} E_{x_i | x_j, x_k}[p_theta(x_j | x_i) / p(x_j | x_i, x_k)]`
/// for source `i`, pivot `j`, target `k`. `None` when no event has mass.
pub fn pivot_constant(sys: &TabularSystem, li: Lang, lj: Lang, lk: Lang) -> (Option<f64>, usize) {
    let n = sys.n();
    let p = sys.marginal(&[li, lj, lk]);
    let pjk = sys.marginal(&[lj, lk]);
    let pik = sys.marginal(&[li, lk]);
    let model = sys.model(li, lj);
    let (mut c, mut skipped) = (None::<f64>, 0);
    for j in 0..n {
        for k in 0..n {
            let w = pjk[j * n + k];
            if w == 0.0 {
                skipped += 1;
                continue;
            }
            let mut e = 0.0;
            for i in 0..n {
                let pijk = p[(i * n + j) * n + k];
                if pijk > 0.0 {
                    let p_i_given_jk = pijk / w;
                    let p_j_given_ik = pijk / pik[i * n + k];
                    e += p_i_given_jk * model.get(i, j) / p_j_given_ik;
                }
            }
            c = Some(c.map_or(e, |c| c.max(e)));
        }
    }
    (c, skipped)
}

/// All measured constants for a three-language chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub delta: f64,
    pub xi: f64,
    pub c: Option<f64>,
    pub epsilon_hat: f64,
    pub skipped: usize,
}

pub fn measure_constants(sys: &TabularSystem) -> Result<Constants> {
    let a = assumption_constants(sys)?;
    let levels = error_levels(sys);
    let mut c = None::<f64>;
    let mut skipped = a.skipped;
    for &(s, t) in sys.graph.zero_shot() {
        let path = sys.graph.pivot_path(s, t)?;
        if path.len() == 3 {
            let (ci, sk) = pivot_constant(sys, path[0], path[1], path[2]);
            skipped += sk;
            if let Some(ci) = ci {
                c = Some(c.map_or(ci, |c| c.max(ci)));
            }
        }
    }
    Ok(Constants { delta: a.delta, xi: a.xi, c, epsilon_hat: levels.epsilon_hat, skipped })
}

/// Outcome of one theorem check on one system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: String,
    pub seed: Option<u64>,
    pub k: usize,
    pub v: usize,
    pub max_len: usize,
    pub space_size: usize,
    pub epsilon_hat: f64,
    pub max_supervised_ce: f64,
    pub epsilon_sum: f64,
    pub delta: f64,
    pub xi: f64,
    pub kappa: Option<f64>,
    pub c: Option<f64>,
    /// Right-hand side that was checked, when defined.
    pub bound: Option<f64>,
    pub zero_shot_ce: f64,
    /// `None` when the bound is not applicable.
    pub satisfied: Option<bool>,
    pub skipped_events: usize,
    pub distillation_kl: Option<f64>,
    pub distillation_ok: Option<bool>,
    pub note: Option<String>,
}

impl BoundReport {
    pub fn violated(&self) -> bool {
        self.satisfied == Some(false)
    }
}

fn base_report(sys: &TabularSystem, theorem: &str) -> Result<BoundReport> {
    let a = assumption_constants(sys)?;
    let levels = error_levels(sys);
    Ok(BoundReport {
        theorem: theorem.into(),
        seed: sys.seed,
        k: sys.k(),
        v: sys.space.v,
        max_len: sys.space.max_len,
        space_size: sys.n(),
        epsilon_hat: levels.epsilon_hat,
        max_supervised_ce: levels.max_supervised_ce,
        epsilon_sum: levels.epsilon_sum,
        delta: a.delta,
        xi: a.xi,
        kappa: None,
        c: None,
        bound: None,
        zero_shot_ce: 0.0,
        satisfied: None,
        skipped_events: a.skipped,
        distillation_kl: None,
        distillation_ok: None,
        note: None,
    })
}

fn check_three_languages(sys: &TabularSystem) -> Result<()> {
    if sys.k() != 3 || !sys.graph.is_spanning() || sys.graph.zero_shot().is_empty() {
        return Err(invalid("theorem checks need three languages with a spanning supervised set and a zero-shot pair"));
    }
    Ok(())
}

/// Checks `E[-log p_theta(x_k | x_i)] <= kappa(eps)` on every zero-shot
/// direction, plus the distillation corollary `KL <= eps`.
pub fn verify_theorem1(sys: &TabularSystem) -> Result<BoundReport> {
    check_three_languages(sys)?;
    let mut r = base_report(sys, "agreement")?;
    r.zero_shot_ce = sys.graph.zero_shot().iter().map(|&(s, t)| exact_ce(sys, s, t)).fold(0.0, f64::max);
    let mut kl = 0.0f64;
    for &(s, t) in sys.graph.zero_shot() {
        let path = sys.graph.pivot_path(s, t)?;
        // distill the zero-shot s -> t model toward the supervised pivot -> t model
        kl = kl.max(distillation_kl(sys, s, path[path.len() - 2], t));
    }
    r.distillation_kl = Some(kl);
    r.distillation_ok = Some(kl <= r.epsilon_hat + SLACK);
    match kappa(r.epsilon_hat, r.delta, r.xi) {
        Ok(k) => {
            r.kappa = Some(k);
            r.bound = Some(k);
            r.satisfied = Some(r.zero_shot_ce <= k + SLACK);
        }
        Err(Error::BoundUndefined { .. }) => r.note = Some("bound undefined: log(1/xi) <= delta * eps".into()),
        Err(e) => return Err(e),
    }
    Ok(r)
}

/// Full pivot marginalization and its gap to argmax substitution.
#[derive(Clone, Debug, PartialEq)]
pub struct PivotResult {
    pub full: TabularConditional,
    pub argmax: TabularConditional,
    /// Largest total-variation distance between the two rows.
    pub argmax_gap: f64,
}

pub fn exact_pivot(sys: &TabularSystem, src: Lang, pivot: Lang, tgt: Lang) -> Result<PivotResult> {
    if !sys.graph.is_supervised(src, pivot) || !sys.graph.is_supervised(pivot, tgt) {
        return Err(invalid("both pivot hops must be supervised"));
    }
    let n = sys.n();
    let (first, second) = (sys.model(src, pivot), sys.model(pivot, tgt));
    let mut full = vec![0.0; n * n];
    let mut sub = vec![0.0; n * n];
    let mut gap = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let w = first.get(i, j);
            if w > 0.0 {
                for k in 0..n {
                    full[i * n + k] += w * second.get(j, k);
                }
            }
        }
        let best = argmax(first.row(i));
        sub[i * n..(i + 1) * n].copy_from_slice(second.row(best));
        let tv = 0.5 * (0..n).map(|k| (full[i * n + k] - sub[i * n + k]).abs()).sum::<f64>();
        gap = gap.max(tv);
    }
    Ok(PivotResult {
        full: TabularConditional::new(src, tgt, n, full)?,
        argmax: TabularConditional::new(src, tgt, n, sub)?,
        argmax_gap: gap,
    })
}

/// Checks `E[-log sum_j p(x_j | x_i) p(x_k | x_j)] <= C * eps` for every
/// zero-shot direction reached through one pivot.
pub fn verify_pivoting(sys: &TabularSystem) -> Result<BoundReport> {
    check_three_languages(sys)?;
    let mut r = base_report(sys, "pivoting")?;
    let n = sys.n();
    let (mut worst_ce, mut c_max) = (0.0f64, None::<f64>);
    let mut ok = Some(true);
    for &(s, t) in sys.graph.zero_shot() {
        let path = sys.graph.pivot_path(s, t)?;
        if path.len() != 3 {
            return Err(invalid("pivot checks need single-pivot paths"));
        }
        let piv = exact_pivot(sys, s, path[1], t)?;
        let joint = sys.marginal(&[s, t]);
        let ce: f64 = (0..n * n).map(|x| xlogy_neg(joint[x], piv.full.get(x / n, x % n))).sum();
        worst_ce = worst_ce.max(ce);
        let (c, skipped) = pivot_constant(sys, s, path[1], t);
        r.skipped_events += skipped;
        match c {
            Some(c) => {
                c_max = Some(c_max.map_or(c, |m| m.max(c)));
                if ce > c * r.epsilon_hat + SLACK {
                    ok = ok.map(|_| false);
                }
            }
            None => ok = None,
        }
    }
    r.zero_shot_ce = worst_ce;
    r.c = c_max;
    match (ok, c_max) {
        (Some(v), Some(c)) => {
            r.bound = Some(c * r.epsilon_hat);
            r.satisfied = Some(v);
        }
        _ => r.note = Some("source-pivot constant not measurable".into()),
    }
    Ok(r)
}

/// Both sides of the auxiliary-lemma proof, per conditioning event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub epsilon: f64,
    pub delta: f64,
    pub xi: f64,
    /// `log(1/xi) - eps * delta`.
    pub target: f64,
    pub events: usize,
    pub skipped: usize,
    /// `log E[ratio] >= E[log ratio]` failures.
    pub jensen_violations: usize,
    /// `E[log ratio] >= target` failures (the proof's chain).
    pub chain_violations: usize,
    /// `E[ratio] >= target` failures (the statement as written).
    pub statement_violations: usize,
    /// `E[-log p_theta(x_j | x_i)] <= eps * delta` failures, the
    /// supervised-side step the chain needs.
    pub supervised_step_violations: usize,
    pub min_jensen_gap: f64,
    pub min_chain_margin: f64,
}

/// Evaluates the lemma for supervised `i -> j` with auxiliary `k`, using
/// the system's `eps`.
pub fn verify_lemma1(sys: &TabularSystem, (li, lj): Edge, lk: Lang) -> Result<Lemma1Report> {
    if !sys.graph.is_supervised(li, lj) {
        return Err(invalid("the lemma needs a supervised direction"));
    }
    if lk == li || lk == lj {
        return Err(invalid("auxiliary language must differ from both sides"));
    }
    let a = assumption_constants(sys)?;
    let eps = error_levels(sys).epsilon_hat;
    let target = -a.xi.ln() - eps * a.delta;
    let n = sys.n();
    let p = sys.marginal(&[li, lj, lk]);
    let pjk = sys.marginal(&[lj, lk]);
    let pik = sys.marginal(&[li, lk]);
    let model = sys.model(li, lj);
    let mut r = Lemma1Report {
        epsilon: eps,
        delta: a.delta,
        xi: a.xi,
        target,
        events: 0,
        skipped: 0,
        jensen_violations: 0,
        chain_violations: 0,
        statement_violations: 0,
        supervised_step_violations: 0,
        min_jensen_gap: f64::INFINITY,
        min_chain_margin: f64::INFINITY,
    };
    for j in 0..n {
        for k in 0..n {
            let w = pjk[j * n + k];
            if w == 0.0 {
                r.skipped += 1;
                continue;
            }
            r.events += 1;
            let (mut e_ratio, mut e_log, mut e_neg_log_model) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let pijk = p[(i * n + j) * n + k];
                if pijk == 0.0 {
                    continue;
                }
                let q = pijk / w;
                let p_j_given_ik = pijk / pik[i * n + k];
                let m = model.get(i, j);
                e_ratio += q * m / p_j_given_ik;
                e_log += q * (m.ln() - p_j_given_ik.ln());
                e_neg_log_model -= q * m.ln();
            }
            let jensen_gap = e_ratio.ln() - e_log;
            r.min_jensen_gap = r.min_jensen_gap.min(jensen_gap);
            r.min_chain_margin = r.min_chain_margin.min(e_log - target);
            r.jensen_violations += usize::from(jensen_gap < -SLACK);
            r.chain_violations += usize::from(e_log < target - SLACK);
            r.statement_violations += usize::from(e_ratio < target - SLACK);
            r.supervised_step_violations += usize::from(e_neg_log_model > eps * a.delta + SLACK);
        }
    }
    Ok(r)
}

/// How the model conditions on an auxiliary translation in addition to the
/// source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextModel {
    /// `p(x | z, y) = p(x | y)`.
    Independent,
    /// `p(x | z, y)` proportional to `p(x | y) * prod_c p(x | z_c)`.
    ProductOfExperts,
}

/// The pairwise agreement objective for one parallel pair, exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementObjective {
    /// `log sum_z p(x_t, z | x_s) p(x_s, z | x_t)`.
    pub full: f64,
    pub log_p_t_given_s: f64,
    pub log_p_s_given_t: f64,
    /// `log sum_z p(z | x_s) p(z | x_t)`.
    pub agreement: f64,
    /// `full - (log_p_t_given_s + log_p_s_given_t + agreement)`.
    pub residual: f64,
    /// `sum_c E_{z_c ~ p(. | x_s)}[log p(z_c | x_t)]`.
    pub lower_bound_from_s: f64,
    /// `sum_c E_{z_c ~ p(. | x_t)}[log p(z_c | x_s)]`.
    pub lower_bound_from_t: f64,
}

fn row_dot_log(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(&a, _)| a > 0.0).map(|(&a, &b)| a * b.ln()).sum()
}

/// Exact agreement objective for `(x_s, x_t)` with every language other
/// than `s` and `t` as an auxiliary.
pub fn exact_agreement_objective(sys: &TabularSystem, (s, t): Edge, xs: usize, xt: usize, context: ContextModel) -> Result<AgreementObjective> {
    let n = sys.n();
    if xs >= n || xt >= n || s == t {
        return Err(invalid("sentence index outside the space or identical languages"));
    }
    let aux: Vec<Lang> = sys.graph.languages().filter(|&l| l != s && l != t).collect();
    let combos = (n as u128).pow(aux.len() as u32);
    if combos > ENUMERATION_CAP {
        return Err(Error::TooLarge { size: combos, cap: ENUMERATION_CAP });
    }
    let p_ts = sys.model(s, t).get(xs, xt);
    let p_st = sys.model(t, s).get(xt, xs);
    let (mut full, mut agree) = (0.0, 0.0);
    let mut z = vec![0usize; aux.len()];
    for _ in 0..combos {
        let mut pz_s = 1.0;
        let mut pz_t = 1.0;
        for (c, &l) in aux.iter().enumerate() {
            pz_s *= sys.model(s, l).get(xs, z[c]);
            pz_t *= sys.model(t, l).get(xt, z[c]);
        }
        agree += pz_s * pz_t;
        let (ctx_t, ctx_s) = match context {
            ContextModel::Independent => (p_ts, p_st),
            ContextModel::ProductOfExperts => {
                let expert = |target: Lang, src_row: &[f64], x: usize| -> f64 {
                    let score = |cand: usize| src_row[cand] * aux.iter().enumerate().map(|(c, &l)| sys.model(l, target).get(z[c], cand)).product::<f64>();
                    let norm: f64 = (0..n).map(score).sum();
                    if norm > 0.0 {
                        score(x) / norm
                    } else {
                        0.0
                    }
                };
                (expert(t, sys.model(s, t).row(xs), xt), expert(s, sys.model(t, s).row(xt), xs))
            }
        };
        full += pz_s * ctx_t * pz_t * ctx_s;
        for d in z.iter_mut().rev() {
            *d += 1;
            if *d < n {
                break;
            }
            *d = 0;
        }
    }
    let (mut lb_s, mut lb_t) = (0.0, 0.0);
    for &l in &aux {
        lb_s += row_dot_log(sys.model(s, l).row(xs), sys.model(t, l).row(xt));
        lb_t += row_dot_log(sys.model(t, l).row(xt), sys.model(s, l).row(xs));
    }
    let (full, agreement) = (full.ln(), agree.ln());
    Ok(AgreementObjective {
        full,
        log_p_t_given_s: p_ts.ln(),
        log_p_s_given_t: p_st.ln(),
        agreement,
        residual: full - (p_ts.ln() + p_st.ln() + agreement),
        lower_bound_from_s: lb_s,
        lower_bound_from_t: lb_t,
    })
}

/// Product-of-conditionals joint over all languages, normalized by `Z`.
pub struct FullLikelihood<'a> {
    sys: &'a TabularSystem,
    /// Unnormalized potential per tuple.
    potential: Vec<f64>,
    pub log_z: f64,
}

/// One observed-pair check of `log p(x_a, x_b) + log Z <= L_agree`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullLikelihoodReport {
    pub x_a: usize,
    pub x_b: usize,
    pub log_p: f64,
    pub log_z: f64,
    pub l_agree: f64,
    pub holds: bool,
}

impl<'a> FullLikelihood<'a> {
    pub fn new(sys: &'a TabularSystem) -> Result<Self> {
        let (k, n) = (sys.k(), sys.n());
        let size = (n as u128).pow(k as u32);
        if size > ENUMERATION_CAP {
            return Err(Error::TooLarge { size, cap: ENUMERATION_CAP });
        }
        let mut potential = Vec::with_capacity(size as usize);
        for idx in 0..size as usize {
            let x = sys.tuple(idx);
            let mut p = 1.0;
            for i in 0..k {
                for j in (0..k).filter(|&j| j != i) {
                    p *= sys.model(Lang(i), Lang(j)).get(x[i], x[j]);
                }
            }
            potential.push(p);
        }
        let log_z = potential.iter().sum::<f64>().ln();
        Ok(Self { sys, potential, log_z })
    }

    /// Observed pair in languages `(a, b)`; all others are marginalized.
    pub fn check(&self, (a, b): Edge, xa: usize, xb: usize) -> FullLikelihoodReport {
        let sys = self.sys;
        let others: Vec<Lang> = sys.graph.languages().filter(|&l| l != a && l != b).collect();
        let mut marg = 0.0;
        for (idx, &p) in self.potential.iter().enumerate() {
            let x = sys.tuple(idx);
            if x[a.0] == xa && x[b.0] == xb {
                marg += p;
            }
        }
        let log_p = marg.ln() - self.log_z;
        let mut agree = 0.0;
        let n = sys.n();
        let combos = n.pow(others.len() as u32);
        for c in 0..combos {
            let mut rest = c;
            let mut prod = 1.0;
            for &l in others.iter().rev() {
                let z = rest % n;
                rest /= n;
                prod *= sys.model(a, l).get(xa, z) * sys.model(b, l).get(xb, z);
            }
            agree += prod;
        }
        let l_agree = sys.model(b, a).get(xb, xa).ln() + sys.model(a, b).get(xa, xb).ln() + agree.ln();
        FullLikelihoodReport { x_a: xa, x_b: xb, log_p, log_z: self.log_z, l_agree, holds: log_p + self.log_z <= l_agree + SLACK }
    }
}

/// Dimensions drawn by the randomized harnesses: (base vocabulary,
/// synonyms, max length).
const HARNESS_DIMS: [(usize, usize, usize); 6] = [(1, 2, 1), (1, 2, 2), (1, 3, 1), (1, 3, 2), (2, 2, 1), (2, 2, 2)];

fn harness_spec(rng: &mut ChaCha8Rng, k: usize, dims: &[(usize, usize, usize)], max_weight: f64) -> RandomSystemSpec {
    let (b, m, l) = dims[rng.random_range(0..dims.len())];
    let mut spec = RandomSystemSpec::new(k, b, m, l);
    spec.max_weight = max_weight.max(1.0 / m as f64 + 1e-3);
    spec.max_perturbation = rng.random_range(0.0..=0.05);
    spec
}

/// Randomized agreement-bound harness on chain systems with `xi <= max_xi`.
pub fn theorem1_harness(count: usize, seed: u64, max_xi: f64) -> Result<Vec<BoundReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > count * 50 {
            return Err(invalid(format!("could not draw {count} systems with xi <= {max_xi}")));
        }
        let spec = harness_spec(&mut rng, 3, &HARNESS_DIMS, max_xi);
        let sys = random_system(&spec, chain_graph(), rng.random())?;
        let r = verify_theorem1(&sys)?;
        if r.xi <= max_xi {
            out.push(r);
        }
    }
    Ok(out)
}

/// Randomized pivoting harness keeping systems with `C <= max_c`.
pub fn pivoting_harness(count: usize, seed: u64, max_c: f64) -> Result<Vec<BoundReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > count * 50 {
            return Err(invalid(format!("could not draw {count} systems with C <= {max_c}")));
        }
        let spec = harness_spec(&mut rng, 3, &HARNESS_DIMS, 0.6);
        let sys = random_system(&spec, chain_graph(), rng.random())?;
        let r = verify_pivoting(&sys)?;
        if r.c.is_some_and(|c| c <= max_c) {
            out.push(r);
        }
    }
    Ok(out)
}

/// Summary of the lower-bound check over every pair of many systems.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InequalityTally {
    pub systems: usize,
    pub checks: usize,
    pub violations: usize,
    /// Smallest `rhs - lhs` seen.
    pub min_margin: f64,
}

/// Cross-entropy lower bound versus exact agreement term on unstructured
/// random systems with `v` symbols, length 1, one auxiliary language.
pub fn jensen_harness(count: usize, seed: u64, v: usize) -> Result<InequalityTally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = InequalityTally { min_margin: f64::INFINITY, ..Default::default() };
    for _ in 0..count {
        let sys = random_unstructured_system(chain_graph(), v, 1, rng.random())?;
        tally.systems += 1;
        let n = sys.n();
        for s in 0..3 {
            for t in (0..3).filter(|&t| t != s) {
                for xs in 0..n {
                    for xt in 0..n {
                        let o = exact_agreement_objective(&sys, (Lang(s), Lang(t)), xs, xt, ContextModel::Independent)?;
                        for lb in [o.lower_bound_from_s, o.lower_bound_from_t] {
                            tally.checks += 1;
                            let margin = o.agreement - lb;
                            tally.min_margin = tally.min_margin.min(margin);
                            tally.violations += usize::from(margin < -SLACK);
                        }
                    }
                }
            }
        }
    }
    Ok(tally)
}

/// Lemma tallies over every supervised direction and auxiliary language
/// of many perturbed chain systems.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Tally {
    pub systems: usize,
    pub events: usize,
    pub jensen_violations: usize,
    pub chain_violations: usize,
    pub statement_violations: usize,
    pub supervised_step_violations: usize,
}

pub fn lemma1_harness(count: usize, seed: u64) -> Result<Lemma1Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Lemma1Tally::default();
    for _ in 0..count {
        let spec = harness_spec(&mut rng, 3, &HARNESS_DIMS, 0.6);
        let sys = random_system(&spec, chain_graph(), rng.random())?;
        tally.systems += 1;
        for &(s, t) in sys.graph.supervised() {
            for aux in sys.graph.languages().filter(|&l| l != s && l != t) {
                let r = verify_lemma1(&sys, (s, t), aux)?;
                tally.events += r.events;
                tally.jensen_violations += r.jensen_violations;
                tally.chain_violations += r.chain_violations;
                tally.statement_violations += r.statement_violations;
                tally.supervised_step_violations += r.supervised_step_violations;
            }
        }
    }
    Ok(tally)
}

/// The four-language graph with language 0 supervised to all others.
pub fn star4_graph() -> TranslationGraph {
    TranslationGraph::new(&["L1", "L2", "L3", "L4"], &[(0, 1), (0, 2), (0, 3)]).expect("valid star")
}

/// `log p(x_1, x_2) + log Z <= L_agree` for every pair of many perturbed
/// four-language systems.
pub fn full_likelihood_harness(count: usize, seed: u64) -> Result<InequalityTally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = InequalityTally { min_margin: f64::INFINITY, ..Default::default() };
    let dims = [(1, 2, 1), (1, 2, 2), (1, 3, 1), (2, 2, 1)];
    for _ in 0..count {
        let spec = harness_spec(&mut rng, 4, &dims, 0.6);
        let sys = random_system(&spec, star4_graph(), rng.random())?;
        let full = FullLikelihood::new(&sys)?;
        tally.systems += 1;
        let n = sys.n();
        for x1 in 0..n {
            for x2 in 0..n {
                let r = full.check((Lang(0), Lang(1)), x1, x2);
                tally.checks += 1;
                tally.min_margin = tally.min_margin.min(r.l_agree - (r.log_p + r.log_z));
                tally.violations += usize::from(!r.holds);
            }
        }
    }
    Ok(tally)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_arithmetic() {
        assert_eq!(kappa(0.0, 0.5, 0.5).unwrap(), 0.0);
        let k = kappa(0.1, 1.0, (-1.0f64).exp()).unwrap();
        assert!((k - 0.1 / 0.9).abs() < 1e-15);
        assert!(matches!(kappa(0.1, 0.5, 1.0), Err(Error::BoundUndefined { .. })));
        assert!(matches!(kappa(2.0, 1.0, 0.5), Err(Error::BoundUndefined { .. })));
    }

    #[test]
    fn kappa_is_monotone_on_its_domain() {
        for a in 0..10 {
            for b in 0..10 {
                let eps = 0.05 + 0.05 * a as f64;
                let xi = 0.05 + 0.05 * b as f64;
                let delta = 0.05;
                if let (Ok(k), Ok(ke), Ok(kx)) = (kappa(eps, delta, xi), kappa(eps + 0.05, delta, xi), kappa(eps, delta, xi + 0.05)) {
                    assert!(ke >= k && kx >= k);
                }
            }
        }
    }

    #[test]
    fn pivot_gap_on_disagreeing_second_hops() {
        let g = chain_graph();
        let mut sys = random_system(&RandomSystemSpec::new(3, 1, 2, 1), g, 3).unwrap();
        sys.set_model(TabularConditional::new(Lang(0), Lang(1), 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap()).unwrap();
        sys.set_model(TabularConditional::new(Lang(1), Lang(2), 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let r = exact_pivot(&sys, Lang(0), Lang(1), Lang(2)).unwrap();
        assert!((r.argmax_gap - 0.5).abs() < 1e-15);
        assert!((r.full.get(0, 0) - 0.5).abs() < 1e-15);
    }
}
