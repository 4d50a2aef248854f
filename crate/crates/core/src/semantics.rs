//! Spectral evidence to class probabilities and expected mass density, plus
//! scoring of vegetation masks against annotated ground truth.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::AugmentedPoint;
use crate::spectral::{
    distance_values, otsu_threshold, BandSelection, DistanceKind, IndexEvaluator, IndexKind,
    ReferenceProfile, ReflectanceSpectrum,
};

/// Reference density of the Plants class (kg/m²).
pub const PLANTS_DENSITY: f64 = 20.0;
/// Reference density of everything else, concrete (kg/m²).
pub const NOT_PLANTS_DENSITY: f64 = 2400.0;

/// Annotation classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Grass,
    Track,
    Vegetation,
    Building,
    Pedestrian,
    Obstacle,
    Other,
}

impl Label {
    pub const ALL: [Label; 7] = [
        Label::Grass,
        Label::Track,
        Label::Vegetation,
        Label::Building,
        Label::Pedestrian,
        Label::Obstacle,
        Label::Other,
    ];

    /// Plants macro-class: Vegetation and Grass.
    pub fn is_plants(self) -> bool {
        matches!(self, Label::Grass | Label::Vegetation)
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Grass => "Grass",
            Label::Track => "Track",
            Label::Vegetation => "Vegetation",
            Label::Building => "Building",
            Label::Pedestrian => "Pedestrian",
            Label::Obstacle => "Obstacle",
            Label::Other => "Other",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid("label", format!("unknown class `{}`", s.trim())))
    }
}

/// Likelihood `p(s|c)` of the semantic measurement `s`, here the Plants
/// probability derived from ndvi.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    /// `p(s|c) = s`
    Plants,
    /// `p(s|c) = 1 - s`
    NotPlants,
    /// Measurement-independent likelihood.
    Constant(f64),
}

impl Likelihood {
    pub fn eval(self, plants_probability: f64) -> f64 {
        match self {
            Likelihood::Plants => plants_probability,
            Likelihood::NotPlants => 1.0 - plants_probability,
            Likelihood::Constant(c) => c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDensity {
    pub class: String,
    pub density_kg_m2: f64,
    pub likelihood: Likelihood,
}

/// Semantic classes with their reference mass densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassDensity>", into = "Vec<ClassDensity>")]
pub struct ClassDensityTable {
    entries: Vec<ClassDensity>,
}

impl ClassDensityTable {
    pub fn new(entries: Vec<ClassDensity>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("densities", "density table is empty"));
        }
        for (i, e) in entries.iter().enumerate() {
            if !(e.density_kg_m2 >= 0.0) || !e.density_kg_m2.is_finite() {
                return Err(Error::invalid(
                    "densities",
                    format!("class `{}` has an invalid density", e.class),
                ));
            }
            if let Likelihood::Constant(c) = e.likelihood {
                if !(c >= 0.0) || !c.is_finite() {
                    return Err(Error::invalid(
                        "densities",
                        format!("class `{}` has an invalid constant likelihood", e.class),
                    ));
                }
            }
            if entries[..i].iter().any(|o| o.class == e.class) {
                return Err(Error::invalid(
                    "densities",
                    format!("duplicate class `{}`", e.class),
                ));
            }
        }
        Ok(ClassDensityTable { entries })
    }

    /// Two classes: Plants at 20 kg/m² and not-Plants at 2400 kg/m².
    pub fn plants_vs_rest(plants: f64, not_plants: f64) -> Result<Self> {
        ClassDensityTable::new(vec![
            ClassDensity {
                class: "plants".into(),
                density_kg_m2: plants,
                likelihood: Likelihood::Plants,
            },
            ClassDensity {
                class: "not_plants".into(),
                density_kg_m2: not_plants,
                likelihood: Likelihood::NotPlants,
            },
        ])
    }

    pub fn entries(&self) -> &[ClassDensity] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn densities(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.density_kg_m2).collect()
    }

    pub fn likelihoods(&self, plants_probability: f64) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| e.likelihood.eval(plants_probability))
            .collect()
    }

    /// Expected density for a given Plants probability.
    pub fn density_for(&self, plants_probability: f64) -> Result<f64> {
        expected_mass_density(self, &self.likelihoods(plants_probability))
    }
}

impl Default for ClassDensityTable {
    fn default() -> Self {
        ClassDensityTable::plants_vs_rest(PLANTS_DENSITY, NOT_PLANTS_DENSITY)
            .expect("default densities are valid")
    }
}

impl TryFrom<Vec<ClassDensity>> for ClassDensityTable {
    type Error = Error;
    fn try_from(v: Vec<ClassDensity>) -> Result<Self> {
        ClassDensityTable::new(v)
    }
}

impl From<ClassDensityTable> for Vec<ClassDensity> {
    fn from(t: ClassDensityTable) -> Self {
        t.entries
    }
}

/// Plants probability from ndvi: `clamp((ndvi + 1) / 2, 0, 1)`.
pub fn plants_probability(ndvi: f64) -> f64 {
    ((ndvi + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// `E[d] = Σ d(c_i) p(s|c_i) / Σ p(s|c_i)`.
pub fn expected_mass_density(table: &ClassDensityTable, likelihoods: &[f64]) -> Result<f64> {
    if likelihoods.len() != table.len() {
        return Err(Error::DimensionMismatch {
            what: "likelihood vector",
            expected: table.len(),
            actual: likelihoods.len(),
        });
    }
    if likelihoods.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid(
            "likelihoods",
            "likelihoods must be finite and non-negative",
        ));
    }
    let (num, den) = table
        .entries
        .iter()
        .zip(likelihoods)
        .fold((0.0, 0.0), |(n, d), (e, p)| {
            (n + e.density_kg_m2 * p, d + p)
        });
    if den == 0.0 {
        return Err(Error::Uninformative);
    }
    // the normalized sum can round a hair outside the class range
    let (lo, hi) = table
        .entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.density_kg_m2), hi.max(e.density_kg_m2))
        });
    Ok((num / den).clamp(lo, hi))
}

/// Turns reflectance into Plants probability and expected mass density.
#[derive(Clone, Debug, Default)]
pub struct SemanticModel {
    pub bands: BandSelection,
    pub table: ClassDensityTable,
}

impl SemanticModel {
    /// Fills `plants_probability` and `mass_density` of every point that has
    /// reflectance. Points without reflectance are left untouched.
    pub fn annotate(&self, points: &mut [AugmentedPoint]) -> Result<usize> {
        let mut evaluator: Option<IndexEvaluator> = None;
        let mut annotated = 0;
        for p in points.iter_mut() {
            let Some(r) = &p.reflectance else { continue };
            if evaluator.as_ref().is_none_or(|e| e.grid() != r.grid()) {
                evaluator = Some(IndexEvaluator::new(IndexKind::Ndvi, r.grid(), &self.bands)?);
            }
            let ndvi = evaluator.as_ref().unwrap().evaluate_values(r.values());
            let prob = plants_probability(ndvi.value);
            p.plants_probability = Some(prob);
            p.mass_density = Some(self.table.density_for(prob)?);
            annotated += 1;
        }
        Ok(annotated)
    }
}

/// A map point with its annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPoint {
    pub position: Vector3<f64>,
    pub label: Label,
    pub reflectance: ReflectanceSpectrum,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// One row of the segmentation benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub index_name: String,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub specificity: f64,
    pub duration_ms: f64,
    pub counts: ConfusionCounts,
    /// Set when some metric had a zero denominator and was reported as 0.
    pub degenerate: bool,
    /// Binarization threshold, when the mask came from Otsu.
    pub threshold: Option<f64>,
    /// Per-point values that had to be replaced (zero denominators, zero-norm spectra).
    pub degenerate_values: usize,
}

fn safe_ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl SegmentationReport {
    pub fn from_counts(index_name: impl Into<String>, c: ConfusionCounts) -> Self {
        let mut degenerate = false;
        let iou = safe_ratio(c.tp, c.tp + c.fp + c.fn_, &mut degenerate);
        let precision = safe_ratio(c.tp, c.tp + c.fp, &mut degenerate);
        let recall = safe_ratio(c.tp, c.tp + c.fn_, &mut degenerate);
        let accuracy = safe_ratio(c.tp + c.tn, c.total(), &mut degenerate);
        let specificity = safe_ratio(c.tn, c.tn + c.fp, &mut degenerate);
        let f1 = if precision + recall == 0.0 {
            degenerate = true;
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SegmentationReport {
            index_name: index_name.into(),
            iou,
            precision,
            recall,
            accuracy,
            f1,
            specificity,
            duration_ms: 0.0,
            counts: c,
            degenerate,
            threshold: None,
            degenerate_values: 0,
        }
    }
}

/// Scores a predicted Plants mask against the ground-truth mask.
pub fn evaluate_segmentation(predicted: &[bool], truth: &[bool]) -> Result<SegmentationReport> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "segmentation masks",
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("masks", "segmentation masks are empty"));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(SegmentationReport::from_counts("", c))
}

/// Segmentation method: a vegetation index or a distance to the Plants profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Index(IndexKind),
    Distance(DistanceKind),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Index(k) => k.name(),
            Method::Distance(k) => k.name(),
        }
    }

    /// All ten indices followed by the three distances.
    pub fn all() -> Vec<Method> {
        IndexKind::ALL
            .into_iter()
            .map(Method::Index)
            .chain(DistanceKind::ALL.into_iter().map(Method::Distance))
            .collect()
    }
}

/// Profiles of Plants classes (by label name, or the literal "plants").
fn plants_profiles(profiles: &[ReferenceProfile]) -> Vec<&ReferenceProfile> {
    profiles
        .iter()
        .filter(|p| {
            p.class_name.eq_ignore_ascii_case("plants")
                || p.class_name.parse::<Label>().is_ok_and(Label::is_plants)
        })
        .collect()
}

fn timer() -> Option<std::time::Instant> {
    #[cfg(target_arch = "wasm32")]
    {
        None
    }
    #[cfg(not(target_arch = "wasm32"))]
    {
        Some(std::time::Instant::now())
    }
}

fn map_values<F>(points: &[LabeledPoint], f: F) -> Vec<(f64, bool)>
where
    F: Fn(&LabeledPoint) -> (f64, bool) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        points.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        points.iter().map(f).collect()
    }
}

/// Runs every method over the map: score each point, binarize with Otsu,
/// compare against the Plants ground truth.
///
/// Indices put plants on their vegetation side (high, except exr). Distances
/// are measured to the closest Plants reference profile and plants are the
/// low-distance side.
pub fn benchmark_indices(
    map: &[LabeledPoint],
    indices: &[IndexKind],
    distances: &[DistanceKind],
    profiles: &[ReferenceProfile],
    bands: &BandSelection,
    otsu_bins: usize,
) -> Result<Vec<SegmentationReport>> {
    if map.is_empty() {
        return Err(Error::invalid("map", "labeled map is empty"));
    }
    let grid = map[0].reflectance.grid().clone();
    if map.iter().any(|p| p.reflectance.grid() != &grid) {
        return Err(Error::GridMismatch);
    }
    let truth: Vec<bool> = map.iter().map(|p| p.label.is_plants()).collect();
    let plants_refs = plants_profiles(profiles);
    if !distances.is_empty() {
        if plants_refs.is_empty() {
            return Err(Error::invalid(
                "profiles",
                "no Plants reference profile (Grass, Vegetation or plants)",
            ));
        }
        if plants_refs.iter().any(|p| p.spectrum.grid() != &grid) {
            return Err(Error::GridMismatch);
        }
    }

    let methods = indices
        .iter()
        .map(|&k| Method::Index(k))
        .chain(distances.iter().map(|&k| Method::Distance(k)));
    let mut reports = Vec::new();
    for method in methods {
        let start = timer();
        let scored = match method {
            Method::Index(kind) => {
                let ev = IndexEvaluator::new(kind, &grid, bands)?;
                map_values(map, |p| {
                    let v = ev.evaluate_values(p.reflectance.values());
                    (v.value, v.degenerate)
                })
            }
            Method::Distance(kind) => map_values(map, |p| {
                let mut degenerate = false;
                let d = plants_refs
                    .iter()
                    .map(|r| {
                        distance_values(kind, p.reflectance.values(), r.spectrum.values())
                            .unwrap_or_else(|_| {
                                // zero-norm spectrum: no angular information
                                degenerate = true;
                                std::f64::consts::FRAC_PI_2
                            })
                    })
                    .fold(f64::INFINITY, f64::min);
                (d, degenerate)
            }),
        };
        let values: Vec<f64> = scored.iter().map(|s| s.0).collect();
        let plants_high = match method {
            Method::Index(k) => k.plants_high(),
            Method::Distance(_) => false,
        };
        let (predicted, threshold) = match otsu_threshold(&values, otsu_bins) {
            Ok(t) => (
                values
                    .iter()
                    .map(|&v| t.is_high(v) == plants_high)
                    .collect::<Vec<_>>(),
                Some(t.threshold),
            ),
            // a constant score separates nothing: everything on the low side
            Err(Error::DegenerateHistogram(_)) => (vec![!plants_high; values.len()], None),
            Err(e) => return Err(e),
        };
        let elapsed = start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3);
        let mut report = evaluate_segmentation(&predicted, &truth)?;
        report.index_name = method.name().to_string();
        report.duration_ms = elapsed;
        report.threshold = threshold;
        report.degenerate_values = scored.iter().filter(|s| s.1).count();
        reports.push(report);
    }
    Ok(reports)
}

/// Fixed-width text table: Index, IoU, Prec., Rec., Acc., F1, Spec., Δt.
pub fn format_report_table(reports: &[SegmentationReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>10}",
        "Index", "IoU", "Prec.", "Rec.", "Acc.", "F1", "Spec.", "Δt [ms]"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<8} {:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>10.1}",
            r.index_name,
            r.iou,
            r.precision,
            r.recall,
            r.accuracy,
            r.f1,
            r.specificity,
            r.duration_ms
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn plants_table() -> ClassDensityTable {
        ClassDensityTable::default()
    }

    #[test]
    fn probability_map() {
        assert_eq!(plants_probability(1.0), 1.0);
        assert_eq!(plants_probability(-1.0), 0.0);
        assert_eq!(plants_probability(0.0), 0.5);
        assert_eq!(plants_probability(3.0), 1.0);
    }

    #[test]
    fn expected_density_examples() {
        let t = plants_table();
        assert_eq!(expected_mass_density(&t, &[1.0, 0.0]).unwrap(), 20.0);
        assert_abs_diff_eq!(
            expected_mass_density(&t, &[0.5, 0.5]).unwrap(),
            1210.0,
            epsilon = 1e-12
        );
        let same = ClassDensityTable::plants_vs_rest(37.0, 37.0).unwrap();
        assert_eq!(expected_mass_density(&same, &[0.2, 0.9]).unwrap(), 37.0);
    }

    #[test]
    fn expected_density_errors() {
        let t = plants_table();
        assert!(matches!(
            expected_mass_density(&t, &[0.0, 0.0]),
            Err(Error::Uninformative)
        ));
        assert!(expected_mass_density(&t, &[1.0]).is_err());
        assert!(expected_mass_density(&t, &[-1.0, 2.0]).is_err());
    }

    #[test]
    fn table_validation() {
        assert!(ClassDensityTable::new(vec![]).is_err());
        assert!(ClassDensityTable::plants_vs_rest(-1.0, 3.0).is_err());
        let dup = vec![
            ClassDensity {
                class: "a".into(),
                density_kg_m2: 1.0,
                likelihood: Likelihood::Plants,
            },
            ClassDensity {
                class: "a".into(),
                density_kg_m2: 2.0,
                likelihood: Likelihood::NotPlants,
            },
        ];
        assert!(ClassDensityTable::new(dup).is_err());
    }

    #[test]
    fn segmentation_examples() {
        let truth = [true, false, true, false];
        let perfect = evaluate_segmentation(&truth, &truth).unwrap();
        for m in [
            perfect.iou,
            perfect.precision,
            perfect.recall,
            perfect.accuracy,
            perfect.f1,
            perfect.specificity,
        ] {
            assert_eq!(m, 1.0);
        }
        let inverted: Vec<bool> = truth.iter().map(|t| !t).collect();
        assert_eq!(evaluate_segmentation(&inverted, &truth).unwrap().iou, 0.0);

        // predicted {a,b}, truth {b,c}, universe {a,b,c,d}
        let r = evaluate_segmentation(&[true, true, false, false], &[false, true, true, false])
            .unwrap();
        assert_abs_diff_eq!(r.iou, 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!((r.precision, r.recall, r.accuracy), (0.5, 0.5, 0.5));
        assert!(!r.degenerate);
    }

    #[test]
    fn segmentation_degenerate_and_errors() {
        let r = evaluate_segmentation(&[false, false], &[false, false]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.accuracy, 1.0);
        assert!(evaluate_segmentation(&[true], &[true, false]).is_err());
        assert!(evaluate_segmentation(&[], &[]).is_err());
    }

    #[test]
    fn labels_parse() {
        for l in Label::ALL {
            assert_eq!(l.name().parse::<Label>().unwrap(), l);
        }
        assert_eq!("grass".parse::<Label>().unwrap(), Label::Grass);
        assert!("tree".parse::<Label>().is_err());
        assert!(
            Label::Grass.is_plants() && Label::Vegetation.is_plants() && !Label::Track.is_plants()
        );
    }

    #[test]
    fn table_toml_round_trip() {
        #[derive(Serialize, Deserialize)]
        struct W {
            densities: ClassDensityTable,
        }
        let text = toml::to_string(&W {
            densities: plants_table(),
        })
        .unwrap();
        let back: W = toml::from_str(&text).unwrap();
        assert_eq!(back.densities, plants_table());
    }

    proptest! {
        #[test]
        fn density_scale_invariant(p in 0.0f64..1.0, k in 1e-3f64..1e3) {
            let t = plants_table();
            let l = t.likelihoods(p);
            let a = expected_mass_density(&t, &l).unwrap();
            let scaled: Vec<f64> = l.iter().map(|v| v * k).collect();
            let b = expected_mass_density(&t, &scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn density_monotone_in_denser_class(l0 in 0.01f64..1.0, l1 in 0.0f64..1.0, bump in 0.0f64..1.0) {
            let t = plants_table();
            let a = expected_mass_density(&t, &[l0, l1]).unwrap();
            let b = expected_mass_density(&t, &[l0, l1 + bump]).unwrap();
            prop_assert!(b >= a - 1e-9);
        }

        #[test]
        fn f1_is_harmonic_mean(pred in prop::collection::vec(any::<bool>(), 1..200),
                               seed in any::<u64>()) {
            let truth: Vec<bool> = pred.iter().enumerate().map(|(i, _)| (seed >> (i % 64)) & 1 == 1).collect();
            let r = evaluate_segmentation(&pred, &truth).unwrap();
            if r.precision + r.recall > 0.0 {
                let h = 2.0 * r.precision * r.recall / (r.precision + r.recall);
                prop_assert!((r.f1 - h).abs() < 1e-9);
            }
            for m in [r.iou, r.precision, r.recall, r.accuracy, r.f1, r.specificity] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }
    }
}
