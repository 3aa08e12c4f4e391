//! Piecewise-linear convex stage functions `w(j, ·) = max(floor, max_i Hyp_i)`
//! and the per-stage stack the solver grows.

use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{self, Matrix};
use crate::model::LinearConvexProblem;
use crate::report::format_float;

#[derive(Debug, Error, PartialEq)]
pub enum SubsolutionError {
    #[error("cut at stage {stage} has non-finite value or slope")]
    NonFinite { stage: usize },
    #[error("cut dimension {got} does not match stage dimension {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Affine function `x ↦ v + p·(x − x̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub anchor: Vec<f64>,
    pub value: f64,
    pub slope: Vec<f64>,
    pub iteration_tag: usize,
}

impl Hyperplane {
    pub fn new(anchor: Vec<f64>, value: f64, slope: Vec<f64>, iteration_tag: usize) -> Self {
        Self {
            anchor,
            value,
            slope,
            iteration_tag,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        affine(self.value, &self.slope, &self.anchor, x)
    }
}

#[inline]
fn affine(value: f64, slope: &[f64], anchor: &[f64], x: &[f64]) -> f64 {
    let mut acc = value;
    for i in 0..x.len() {
        acc += slope[i] * (x[i] - anchor[i]);
    }
    acc
}

/// One stage of the subsolution. Cuts keep insertion order; dominated cuts
/// are never removed, so every update is pointwise monotone.
#[derive(Debug, Clone)]
pub struct StageCuts {
    stage: usize,
    dim: usize,
    floor: Option<f64>,
    cuts: Vec<Hyperplane>,
    // Flat copies of the cut data for the evaluation loops.
    values: Vec<f64>,
    anchors: Vec<f64>,
    slopes: Vec<f64>,
    noise_projection: Option<Arc<Matrix>>,
    noise_slopes: Vec<f64>,
    noise_slope_l1: Vec<f64>,
}

impl StageCuts {
    pub fn new(stage: usize, dim: usize, floor: Option<f64>) -> Self {
        Self {
            stage,
            dim,
            floor,
            cuts: Vec::new(),
            values: Vec::new(),
            anchors: Vec::new(),
            slopes: Vec::new(),
            noise_projection: None,
            noise_slopes: Vec::new(),
            noise_slope_l1: Vec::new(),
        }
    }

    /// Attaches `√h·Cᵀ` so each cut also caches its sensitivity to the noise
    /// atom. Must be set before any cut is added.
    pub fn with_noise_projection(mut self, projection: Option<Arc<Matrix>>) -> Self {
        assert!(self.cuts.is_empty(), "noise projection must be set on an empty stage");
        if let Some(p) = &projection {
            assert_eq!(p.cols(), self.dim);
        }
        self.noise_projection = projection;
        self
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn floor(&self) -> Option<f64> {
        self.floor
    }

    pub fn cuts(&self) -> &[Hyperplane] {
        &self.cuts
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub(crate) fn cut_value_at(&self, i: usize, x: &[f64]) -> f64 {
        let d = self.dim;
        affine(
            self.values[i],
            &self.slopes[i * d..(i + 1) * d],
            &self.anchors[i * d..(i + 1) * d],
            x,
        )
    }

    pub(crate) fn cut_slope(&self, i: usize) -> &[f64] {
        &self.slopes[i * self.dim..(i + 1) * self.dim]
    }

    /// Cached `√h·Cᵀp_i`, if a projection matching `d1` is attached.
    pub(crate) fn noise_slope(&self, i: usize) -> Option<&[f64]> {
        let p = self.noise_projection.as_ref()?;
        let k = p.rows();
        Some(&self.noise_slopes[i * k..(i + 1) * k])
    }

    /// `‖√h·Cᵀp_i‖₁`, cached with [`Self::noise_slope`].
    pub(crate) fn noise_slope_l1(&self, i: usize) -> Option<f64> {
        self.noise_projection.as_ref()?;
        Some(self.noise_slope_l1[i])
    }

    pub(crate) fn noise_projection(&self) -> Option<&Matrix> {
        self.noise_projection.as_deref()
    }

    /// Value and active cut at `x`. `None` means the floor is active; the floor
    /// wins ties, and among cuts the lowest insertion index wins.
    pub fn active(&self, x: &[f64]) -> (f64, Option<usize>) {
        let mut best = self.floor.unwrap_or(f64::NEG_INFINITY);
        let mut idx = None;
        for i in 0..self.cuts.len() {
            let v = self.cut_value_at(i, x);
            if v > best {
                best = v;
                idx = Some(i);
            }
        }
        (best, idx)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.active(x).0
    }

    /// Slope of the active cut, or zero when the floor is active.
    pub fn subgradient(&self, x: &[f64]) -> (Vec<f64>, Option<usize>) {
        match self.active(x).1 {
            Some(i) => (self.cut_slope(i).to_vec(), Some(i)),
            None => (vec![0.0; self.dim], None),
        }
    }

    pub fn add_cut(&mut self, cut: Hyperplane) -> Result<(), SubsolutionError> {
        if cut.anchor.len() != self.dim || cut.slope.len() != self.dim {
            return Err(SubsolutionError::Dimension {
                expected: self.dim,
                got: cut.slope.len().max(cut.anchor.len()),
            });
        }
        if !cut.value.is_finite() || !linalg::is_finite(&cut.slope) || !linalg::is_finite(&cut.anchor) {
            return Err(SubsolutionError::NonFinite { stage: self.stage });
        }
        self.values.push(cut.value);
        self.anchors.extend_from_slice(&cut.anchor);
        self.slopes.extend_from_slice(&cut.slope);
        if let Some(p) = &self.noise_projection {
            let s = p.mul_vec(&cut.slope);
            self.noise_slope_l1.push(s.iter().map(|v| v.abs()).sum());
            self.noise_slopes.extend(s);
        }
        self.cuts.push(cut);
        Ok(())
    }
}

/// Subsolution over stages `0..=N`, all starting from the constant floor 0.
#[derive(Debug, Clone)]
pub struct SubsolutionStack {
    stages: Vec<StageCuts>,
}

impl SubsolutionStack {
    pub fn new(problem: &LinearConvexProblem) -> Self {
        let projection = problem.noise_projection().map(Arc::new);
        let d = problem.dims.d;
        let stages = (0..=problem.steps())
            .map(|j| StageCuts::new(j, d, Some(0.0)).with_noise_projection(projection.clone()))
            .collect();
        Self { stages }
    }

    pub fn from_stages(stages: Vec<StageCuts>) -> Self {
        Self { stages }
    }

    /// Number of time steps `N`; there are `N + 1` stages.
    pub fn horizon(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn stage(&self, j: usize) -> &StageCuts {
        &self.stages[j]
    }

    pub fn stage_mut(&mut self, j: usize) -> &mut StageCuts {
        &mut self.stages[j]
    }

    /// Stage `j` mutably alongside stage `j + 1`.
    pub(crate) fn split_stage_mut(&mut self, j: usize) -> (&mut StageCuts, &StageCuts) {
        let (head, tail) = self.stages.split_at_mut(j + 1);
        (&mut head[j], &tail[0])
    }

    pub fn stages(&self) -> &[StageCuts] {
        &self.stages
    }

    pub fn eval(&self, j: usize, x: &[f64]) -> f64 {
        self.stages[j].eval(x)
    }

    pub fn total_cuts(&self) -> usize {
        self.stages.iter().map(StageCuts::len).sum()
    }

    /// CSV dump: `stage, iteration_tag, v, xbar_1..xbar_d, p_1..p_d`.
    pub fn write_cuts_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let d = self.stages.first().map_or(0, StageCuts::dim);
        let mut header = vec!["stage".to_string(), "iteration_tag".into(), "v".into()];
        header.extend((1..=d).map(|i| format!("xbar_{i}")));
        header.extend((1..=d).map(|i| format!("p_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for stage in &self.stages {
            for cut in stage.cuts() {
                let mut row = vec![
                    stage.stage().to_string(),
                    cut.iteration_tag.to_string(),
                    format_float(cut.value),
                ];
                row.extend(cut.anchor.iter().map(|&v| format_float(v)));
                row.extend(cut.slope.iter().map(|&v| format_float(v)));
                writeln!(out, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abs_stage(plus_first: bool) -> StageCuts {
        let mut s = StageCuts::new(0, 1, None);
        let plus = Hyperplane::new(vec![0.0], 0.0, vec![1.0], 1);
        let minus = Hyperplane::new(vec![0.0], 0.0, vec![-1.0], 1);
        let (a, b) = if plus_first { (plus, minus) } else { (minus, plus) };
        s.add_cut(a).unwrap();
        s.add_cut(b).unwrap();
        s
    }

    #[test]
    fn eval_examples() {
        let empty = StageCuts::new(0, 3, Some(0.0));
        assert_eq!(empty.eval(&[7.0, -2.0, 1.0]), 0.0);

        let mut constant = StageCuts::new(0, 3, Some(0.0));
        constant.add_cut(Hyperplane::new(vec![0.0; 3], 1.0, vec![0.0; 3], 1)).unwrap();
        assert_eq!(constant.eval(&[7.0, 3.0, 1.0]), 1.0);

        assert!((abs_stage(true).eval(&[-0.3]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn no_floor_no_cuts_is_minus_infinity() {
        let s = StageCuts::new(0, 1, None);
        assert_eq!(s.eval(&[1.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn subgradient_examples() {
        let s = abs_stage(true);
        assert_eq!(s.subgradient(&[0.5]), (vec![1.0], Some(0)));
        // tie at the kink goes to the first inserted cut
        assert_eq!(s.subgradient(&[0.0]).0, vec![1.0]);
        assert_eq!(abs_stage(false).subgradient(&[0.0]).0, vec![-1.0]);

        let mut floored = StageCuts::new(0, 1, Some(5.0));
        floored.add_cut(Hyperplane::new(vec![0.0], 0.0, vec![1.0], 1)).unwrap();
        assert_eq!(floored.subgradient(&[1.0]), (vec![0.0], None));
        // a cut touching the floor leaves the floor active
        assert_eq!(floored.subgradient(&[5.0]), (vec![0.0], None));
    }

    #[test]
    fn add_cut_examples() {
        let mut s = abs_stage(true);
        let probes: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
        let before: Vec<f64> = probes.iter().map(|&x| s.eval(&[x])).collect();
        s.add_cut(Hyperplane::new(vec![0.0], -10.0, vec![0.0], 2)).unwrap();
        for (x, b) in probes.iter().zip(&before) {
            assert_eq!(s.eval(&[*x]), *b);
        }
        assert_eq!(s.len(), 3);

        // Steeper cut through (1, 1) raises the function beyond x = 1.
        s.add_cut(Hyperplane::new(vec![1.0], 1.0, vec![3.0], 3)).unwrap();
        assert!(s.eval(&[2.0]) > 2.0);
    }

    #[test]
    fn terminal_cut_for_example_6_1_touches_f() {
        let mut s = StageCuts::new(200, 5, Some(0.0));
        s.add_cut(Hyperplane::new(vec![0.0; 5], 1.0, vec![0.0; 5], 1)).unwrap();
        assert_eq!(s.eval(&[0.0; 5]), 1.0);
    }

    #[test]
    fn non_finite_cut_rejected() {
        let mut s = StageCuts::new(4, 1, Some(0.0));
        let err = s.add_cut(Hyperplane::new(vec![0.0], f64::NAN, vec![1.0], 1));
        assert_eq!(err, Err(SubsolutionError::NonFinite { stage: 4 }));
        let err = s.add_cut(Hyperplane::new(vec![0.0], 0.0, vec![f64::INFINITY], 1));
        assert!(err.is_err());
        assert!(s.is_empty());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut s = StageCuts::new(0, 2, Some(0.0));
        assert!(matches!(
            s.add_cut(Hyperplane::new(vec![0.0], 0.0, vec![1.0], 1)),
            Err(SubsolutionError::Dimension { .. })
        ));
    }

    #[test]
    fn cut_dump_layout() {
        let mut s = StageCuts::new(0, 2, Some(0.0));
        s.add_cut(Hyperplane::new(vec![1.0, 2.0], 3.0, vec![-1.0, 0.5], 7)).unwrap();
        let stack = SubsolutionStack::from_stages(vec![s, StageCuts::new(1, 2, Some(0.0))]);
        let mut buf = Vec::new();
        stack.write_cuts_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "stage,iteration_tag,v,xbar_1,xbar_2,p_1,p_2");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "0");
        assert_eq!(row[1], "7");
        assert_eq!(row[2].parse::<f64>().unwrap(), 3.0);
        assert_eq!(row[6].parse::<f64>().unwrap(), 0.5);
        assert!(lines.next().is_none());
    }

    fn random_stage() -> impl Strategy<Value = StageCuts> {
        prop::collection::vec(
            (
                prop::collection::vec(-3.0..3.0f64, 3),
                -5.0..5.0f64,
                prop::collection::vec(-4.0..4.0f64, 3),
            ),
            1..12,
        )
        .prop_map(|cuts| {
            let mut s = StageCuts::new(0, 3, Some(-1.0));
            for (i, (a, v, p)) in cuts.into_iter().enumerate() {
                s.add_cut(Hyperplane::new(a, v, p, i)).unwrap();
            }
            s
        })
    }

    proptest! {
        #[test]
        fn hyperplane_exact_at_anchor_and_affine(
            a in prop::collection::vec(-3.0..3.0f64, 4),
            p in prop::collection::vec(-3.0..3.0f64, 4),
            x in prop::collection::vec(-3.0..3.0f64, 4),
            y in prop::collection::vec(-3.0..3.0f64, 4),
            v in -10.0..10.0f64,
            lambda in 0.0..1.0f64,
        ) {
            let h = Hyperplane::new(a.clone(), v, p, 0);
            prop_assert_eq!(h.eval(&a), v);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(u, w)| lambda * u + (1.0 - lambda) * w).collect();
            let lhs = h.eval(&mix);
            let rhs = lambda * h.eval(&x) + (1.0 - lambda) * h.eval(&y);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn stage_is_convex_with_valid_subgradients(
            s in random_stage(),
            x in prop::collection::vec(-3.0..3.0f64, 3),
            y in prop::collection::vec(-3.0..3.0f64, 3),
            lambda in 0.0..1.0f64,
        ) {
            let mix: Vec<f64> = x.iter().zip(&y).map(|(u, w)| lambda * u + (1.0 - lambda) * w).collect();
            prop_assert!(s.eval(&mix) <= lambda * s.eval(&x) + (1.0 - lambda) * s.eval(&y) + 1e-9);

            let (g, idx) = s.subgradient(&x);
            let lin: f64 = g.iter().zip(y.iter().zip(&x)).map(|(gi, (yi, xi))| gi * (yi - xi)).sum();
            prop_assert!(s.eval(&y) >= s.eval(&x) + lin - 1e-9);

            match idx {
                Some(i) => prop_assert_eq!(s.eval(&x), s.cuts()[i].eval(&x)),
                None => prop_assert_eq!(s.eval(&x), -1.0),
            }
        }

        #[test]
        fn add_cut_is_monotone_and_keeps_prefix(
            s in random_stage(),
            a in prop::collection::vec(-3.0..3.0f64, 3),
            p in prop::collection::vec(-4.0..4.0f64, 3),
            v in -5.0..5.0f64,
            probes in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 20),
        ) {
            let mut next = s.clone();
            next.add_cut(Hyperplane::new(a, v, p, 99)).unwrap();
            prop_assert_eq!(&next.cuts()[..s.len()], s.cuts());
            for x in &probes {
                prop_assert!(next.eval(x) >= s.eval(x));
            }
        }
    }
}
