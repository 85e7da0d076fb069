//! Report assembly for the command-line front end.

use std::collections::BTreeMap;
use std::io;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::catalog::catalog_branch;
use crate::construct::{run_pipeline, ConstructConfig, ConstructReport};
use crate::curvature::{flag_curvature, residuals, ricci_ratio, riemann_tensor, FlagCurvature, KFunction};
use crate::error::{Error, Result};
use crate::frame::RadialFrame;
use crate::metric::{metric_tensor, spray_pq, SprayData};
use crate::oracle::{compare_frames, FdConfig, OracleComparison};
use crate::sample::{sample_frames, Region};
use crate::spec::{domain_check, DomainStatus, MetricSpec};

pub const SCHEMA: u32 = 1;
pub const FLAGS_PER_FRAME: usize = 8;

/// Verdict thresholds on normalized residuals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub berwald: f64,
    pub landsberg: f64,
    pub cfc: f64,
    pub einstein: f64,
    pub oracle_spray: f64,
    pub oracle_riemann: f64,
    pub oracle_berwald: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            berwald: 1e-9,
            landsberg: 1e-7,
            cfc: 1e-7,
            einstein: 1e-7,
            oracle_spray: 1e-5,
            oracle_riemann: 1e-4,
            oracle_berwald: 1e-3,
        }
    }
}

impl Tolerances {
    /// One threshold for the curvature verdicts; oracle thresholds are kept.
    pub fn uniform(tol: f64) -> Self {
        Tolerances {
            berwald: tol,
            landsberg: tol,
            cfc: tol,
            einstein: tol,
            ..Tolerances::default()
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Sampling {
    pub seed: u64,
    pub count: usize,
    pub dim: usize,
    pub region: Region,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub holds: bool,
    /// Largest residual behind the verdict.
    pub worst: f64,
    pub tol: f64,
    /// Per-frame residuals in frame order.
    pub values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    fn from_values(name: impl Into<String>, values: Vec<f64>, tol: f64) -> Self {
        let worst = values.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(*v) });
        Verdict {
            name: name.into(),
            holds: worst <= tol,
            worst,
            tol,
            values,
            k_hat: None,
            note: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FrameResult {
    pub index: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub r: f64,
    pub s: f64,
    pub f: f64,
    pub p: f64,
    pub q: f64,
    pub berwald: [f64; 4],
    pub landsberg: [f64; 2],
    pub cfc: Option<[f64; 3]>,
    /// Largest change of `Ric / ((n−1)F²)` when only `s` moves.
    pub einstein: f64,
    pub positive_definite: bool,
    pub k_flags: Vec<f64>,
    pub k_mean: f64,
    pub k_spread: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalResult {
    pub n: usize,
    pub r: f64,
    pub u: f64,
    pub s: f64,
    pub margin: f64,
    pub f: f64,
    pub p: f64,
    pub q: f64,
    pub spray: Vec<f64>,
    pub g: Vec<f64>,
    pub g_inv: Vec<f64>,
    pub positive_definite: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleFrame {
    pub index: usize,
    pub r: f64,
    pub s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaps: Option<OracleComparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Body {
    Eval(EvalResult),
    Classify { k_hat: f64, frames: Vec<FrameResult> },
    VerifyExamples { dim: usize, count: usize },
    Construct { report: ConstructReport, recovered: Option<Value> },
    OracleCompare { fd: FdConfig, frames: Vec<OracleFrame> },
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub spec: Option<Value>,
    pub sampling: Option<Sampling>,
    pub tolerances: Tolerances,
    pub body: Body,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
    pub timing: Timing,
}

impl Report {
    fn new(command: &'static str, spec: Option<Value>, sampling: Option<Sampling>, tol: Tolerances, body: Body, verdicts: Vec<Verdict>) -> Self {
        let passed = verdicts.iter().all(|v| v.holds);
        Report {
            schema: SCHEMA,
            tool: "ssfinsler",
            version: env!("CARGO_PKG_VERSION"),
            command,
            spec,
            sampling,
            tolerances: tol,
            body,
            verdicts,
            passed,
            timing: Timing { seconds: 0.0 },
        }
    }

    /// JSON with 17 significant digits per float.
    pub fn to_json(&self) -> String {
        to_json_string(self)
    }

    /// [`Report::to_json`] with the timing field removed.
    pub fn to_json_untimed(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("timing");
        }
        to_json_string(&v)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} ({})\n", self.tool, self.command, self.version);
        if let Some(sp) = &self.spec {
            out += &format!("spec: {sp}\n");
        }
        if let Some(s) = &self.sampling {
            out += &format!("frames: {} in dimension {} (seed {})\n", s.count, s.dim, s.seed);
        }
        match &self.body {
            Body::Eval(e) => {
                out += &format!("r = {:.16e}, u = {:.16e}, s = {:.16e}\n", e.r, e.u, e.s);
                out += &format!("F = {:.16e}\nP = {:.16e}\nQ = {:.16e}\n", e.f, e.p, e.q);
                out += &format!("G = {:?}\npositive definite: {}\n", e.spray, e.positive_definite);
            }
            Body::Classify { k_hat, .. } => out += &format!("K estimate: {k_hat:.16e}\n"),
            Body::Construct { report, .. } => {
                for c in &report.checks {
                    let state = if c.pass { "pass" } else { "FAIL" };
                    out += &format!(
                        "stage {}: {state} (residual {:.3e}, tol {:.1e}, {} of {} points skipped)\n",
                        c.stage, c.max_residual, c.tol, c.skipped, c.points
                    );
                }
                if let Some(cl) = &report.classification {
                    out += &format!("verdict: {}\n", cl.verdict);
                }
                for n in &report.notes {
                    out += &format!("note: {n}\n");
                }
            }
            Body::OracleCompare { frames, .. } => {
                let skipped = frames.iter().filter(|f| f.skipped.is_some()).count();
                out += &format!("boundary-skipped frames: {skipped}\n");
            }
            Body::VerifyExamples { .. } => {}
        }
        for v in &self.verdicts {
            let k = v.k_hat.map(|k| format!(", K = {k:.12}")).unwrap_or_default();
            out += &format!(
                "{}: {} (worst {:.3e}, tol {:.1e}{k})\n",
                v.name,
                if v.holds { "holds" } else { "fails" },
                v.worst,
                v.tol
            );
        }
        out += &format!("result: {}\n", if self.passed { "pass" } else { "fail" });
        out
    }
}

/// Stamp the wall-clock time of `run` into its report.
pub fn timed(run: impl FnOnce() -> Result<Report>) -> Result<Report> {
    let t = std::time::Instant::now();
    let mut rep = run()?;
    rep.timing.seconds = t.elapsed().as_secs_f64();
    Ok(rep)
}

struct SeventeenDigits(PrettyFormatter<'static>);

impl Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON where every float carries 17 significant digits.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory serialization");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// `F`, `g`, `g⁻¹`, `P`, `Q` and `G` at one frame.
pub fn eval(spec: &MetricSpec, x: &[f64], y: &[f64]) -> Result<Report> {
    let frame = RadialFrame::new(x, y)?;
    let margin = match domain_check(spec, &frame) {
        DomainStatus::Valid { margin } => margin,
        DomainStatus::Invalid(reason) => return Err(Error::domain("frame", reason)),
    };
    let m = metric_tensor(spec, &frame)?;
    let sp = spray_pq(spec, &frame)?;
    let body = Body::Eval(EvalResult {
        n: frame.n,
        r: frame.r,
        u: frame.u,
        s: frame.s,
        margin,
        f: frame.u * m.phi,
        p: sp.p,
        q: sp.q,
        spray: sp.g,
        g: m.g,
        g_inv: m.g_inv,
        positive_definite: m.positive_definite,
    });
    Ok(Report::new("eval", Some(spec.to_json()), None, Tolerances::default(), body, Vec::new()))
}

struct FramePass {
    spray: SprayData,
    /// `-λ_min / λ_max` of `g_ij`, clamped at zero.
    indefiniteness: f64,
    positive_definite: bool,
    /// Flag curvatures, only where `g_ij` is positive definite.
    flags: Option<FlagCurvature>,
    berwald: [f64; 4],
    landsberg: [f64; 2],
    einstein: f64,
}

/// `Ric / ((n−1)F²)` at the frame versus at other `s` with the same `r`.
fn einstein_defect(spec: &MetricSpec, spray: &SprayData, frame: &RadialFrame) -> Result<f64> {
    let base = ricci_ratio(spray, frame)?;
    let t = frame.s / frame.r;
    let mut worst = 0.0f64;
    for t2 in [0.5 * t, 0.75 * t, -0.5 * t] {
        let mut x = vec![0.0; frame.n];
        let mut y = vec![0.0; frame.n];
        x[0] = frame.r;
        y[0] = t2;
        y[1] = (1.0 - t2 * t2).sqrt();
        let probe = RadialFrame::new(&x, &y)?;
        if !domain_check(spec, &probe).is_valid() {
            continue;
        }
        let sp = spray_pq(spec, &probe)?;
        worst = worst.max((ricci_ratio(&sp, &probe)? - base).abs() / base.abs().max(1.0));
    }
    Ok(worst)
}

fn frame_pass(spec: &MetricSpec, frame: &RadialFrame, seed: u64) -> Result<FramePass> {
    let spray = spray_pq(spec, frame)?;
    let m = metric_tensor(spec, frame)?;
    let flags = if m.positive_definite {
        let riem = riemann_tensor(&spray, frame)?;
        Some(flag_curvature(&m, &riem, frame, FLAGS_PER_FRAME, seed)?)
    } else {
        None
    };
    let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_row_slice(frame.n, frame.n, &m.g)).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(v.abs())));
    let res = residuals(&spray, frame, None)?;
    let einstein = einstein_defect(spec, &spray, frame)?;
    Ok(FramePass {
        spray,
        indefiniteness: (-lo / hi).max(0.0),
        positive_definite: m.positive_definite,
        flags,
        berwald: res.berwald,
        landsberg: res.landsberg,
        einstein,
    })
}

fn max_abs(v: &[f64]) -> f64 {
    crate::tol::max_abs(v)
}

/// Berwald, Landsberg, constant-curvature and Einstein verdicts over seeded frames.
pub fn classify(spec: &MetricSpec, dim: usize, count: usize, seed: u64, tol: Tolerances) -> Result<Report> {
    if count == 0 {
        return Err(Error::InvalidParams("count must be positive".into()));
    }
    let region = Region {
        require_pd: false,
        ..Region::for_spec(spec)
    };
    let frames = sample_frames(spec, dim, count, seed, &region)?;
    let passes: Vec<FramePass> = frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| frame_pass(spec, f, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let means: Vec<f64> = passes.iter().filter_map(|p| p.flags.as_ref().map(|f| f.mean)).collect();
    let k_hat = if means.is_empty() {
        f64::NAN
    } else {
        means.iter().sum::<f64>() / means.len() as f64
    };
    let kf = KFunction::Const(k_hat);
    let kscale = k_hat.abs().max(1.0);
    let mut results = Vec::with_capacity(count);
    let mut cfc_values = Vec::with_capacity(count);
    for (i, (frame, p)) in frames.iter().zip(&passes).enumerate() {
        let cfc = residuals(&p.spray, frame, Some(&kf))?.cfc;
        let k_dev = match &p.flags {
            Some(f) => f.per_flag.iter().fold(0.0f64, |m, k| m.max((k - k_hat).abs())) / kscale,
            None => f64::NAN,
        };
        cfc_values.push(max_abs(&cfc.unwrap_or([0.0; 3])).max(k_dev));
        results.push(FrameResult {
            index: i,
            x: frame.x.clone(),
            y: frame.y.clone(),
            r: frame.r,
            s: frame.s,
            f: frame.u * p.spray.phi_jet.value(),
            p: p.spray.p,
            q: p.spray.q,
            berwald: p.berwald,
            landsberg: p.landsberg,
            cfc,
            einstein: p.einstein,
            positive_definite: p.positive_definite,
            k_flags: p.flags.as_ref().map(|f| f.per_flag.clone()).unwrap_or_default(),
            k_mean: p.flags.as_ref().map_or(f64::NAN, |f| f.mean),
            k_spread: p.flags.as_ref().map_or(f64::NAN, |f| f.spread),
        });
    }
    let mut cfc = Verdict::from_values("cfc", cfc_values, tol.cfc);
    cfc.k_hat = Some(k_hat);
    let indefinite = passes.iter().filter(|p| !p.positive_definite).count();
    let mut pd = Verdict::from_values("positive_definite", passes.iter().map(|p| p.indefiniteness).collect(), 0.0);
    pd.holds = indefinite == 0;
    if indefinite > 0 {
        let note = format!("g is not positive definite at {indefinite} of {count} frames");
        pd.note = Some(note.clone());
        cfc.note = Some(note);
    }
    let verdicts = vec![
        pd,
        Verdict::from_values("berwald", passes.iter().map(|p| max_abs(&p.berwald)).collect(), tol.berwald),
        Verdict::from_values("landsberg", passes.iter().map(|p| max_abs(&p.landsberg)).collect(), tol.landsberg),
        cfc,
        Verdict::from_values("einstein", passes.iter().map(|p| p.einstein).collect(), tol.einstein),
    ];
    let sampling = Sampling {
        seed,
        count,
        dim,
        region,
    };
    // classification reports what holds; it does not fail
    let mut rep = Report::new(
        "classify",
        Some(spec.to_json()),
        Some(sampling),
        tol,
        Body::Classify { k_hat, frames: results },
        verdicts,
    );
    rep.passed = true;
    Ok(rep)
}

/// The catalog examples and their expected flag curvature.
pub const EXAMPLE_MATRIX: [(&str, f64); 5] = [
    ("euclidean", 0.0),
    ("example_6_1", 0.0),
    ("example_6_2", -1.0),
    ("example_6_4", 0.0),
    ("example_6_5", -1.0),
];

/// Per-flag `|K − K_expected|` and the flag spread for one catalog example.
pub fn verify_example(id: &str, sigma: f64, k: f64, dim: usize, count: usize, seed: u64, tol: f64) -> Result<Verdict> {
    let entry = catalog_branch(id, sigma)?;
    let region = Region::for_spec(&entry.spec);
    let frames = sample_frames(&entry.spec, dim, count, seed, &region)?;
    let per: Vec<(f64, f64)> = frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let sp = spray_pq(&entry.spec, f)?;
            let m = metric_tensor(&entry.spec, f)?;
            let riem = riemann_tensor(&sp, f)?;
            let fc = flag_curvature(&m, &riem, f, FLAGS_PER_FRAME, seed.wrapping_add(i as u64))?;
            let dev = fc.per_flag.iter().fold(0.0f64, |a, v| a.max((v - k).abs()));
            Ok((dev, fc.spread))
        })
        .collect::<Result<_>>()?;
    let branch = if sigma < 0.0 { "-" } else { "+" };
    let mut v = Verdict::from_values(
        format!("{id} ({branch}) K = {k}"),
        per.iter().map(|(d, s)| d.max(*s)).collect(),
        tol,
    );
    v.k_hat = Some(k);
    Ok(v)
}

pub fn verify_examples(dim: usize, count: usize, seed: u64, tol: f64) -> Result<Report> {
    let mut verdicts = Vec::new();
    for (id, k) in EXAMPLE_MATRIX {
        let branches: &[f64] = if id == "euclidean" { &[1.0] } else { &[1.0, -1.0] };
        for &sigma in branches {
            verdicts.push(verify_example(id, sigma, k, dim, count, seed, tol)?);
        }
    }
    Ok(Report::new(
        "verify-examples",
        None,
        None,
        Tolerances::uniform(tol),
        Body::VerifyExamples { dim, count },
        verdicts,
    ))
}

/// Run the construction pipeline.
pub fn construct(cfg: &ConstructConfig) -> Result<Report> {
    let (state, report) = run_pipeline(cfg)?;
    let mut verdicts: Vec<Verdict> = report
        .checks
        .iter()
        .map(|c| {
            let mut v = Verdict::from_values(c.stage, vec![c.max_residual], c.tol);
            v.holds = c.pass;
            v
        })
        .collect();
    if let Some(cl) = &report.classification {
        let mut v = Verdict::from_values("flag curvature", vec![cl.k_spread], CONSTRUCT_K_TOL);
        v.k_hat = Some(cl.k_mean);
        v.note = Some(cl.verdict.clone());
        verdicts.push(v);
    }
    if let Some(stage) = report.failed_stage {
        if verdicts.iter().all(|v| v.holds) {
            verdicts.push(Verdict {
                name: stage.to_string(),
                holds: false,
                worst: f64::NAN,
                tol: 0.0,
                values: Vec::new(),
                k_hat: None,
                note: Some("stage failed".into()),
            });
        }
    }
    let recovered = state.recovered.as_ref().map(|s| s.to_json());
    Ok(Report::new(
        "construct",
        Some(cfg.to_json()),
        None,
        Tolerances::default(),
        Body::Construct { report, recovered },
        verdicts,
    ))
}

const CONSTRUCT_K_TOL: f64 = 1e-7;

/// Closed-form versus finite-difference gaps over seeded frames.
pub fn oracle_compare(spec: &MetricSpec, dim: usize, count: usize, seed: u64, fd: &FdConfig, tol: Tolerances) -> Result<Report> {
    let region = Region::for_spec(spec);
    let frames = sample_frames(spec, dim, count, seed, &region)?;
    let gaps = compare_frames(spec, &frames, fd);
    let mut out = Vec::with_capacity(count);
    let mut cols: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (i, (f, g)) in frames.iter().zip(gaps).enumerate() {
        let (gaps, skipped) = match g {
            Ok(c) => {
                cols.entry("spray").or_default().push(c.spray);
                cols.entry("riemann").or_default().push(c.riemann);
                cols.entry("berwald").or_default().push(c.berwald);
                (Some(c), None)
            }
            Err(e @ Error::Boundary { .. }) => (None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        out.push(OracleFrame {
            index: i,
            r: f.r,
            s: f.s,
            gaps,
            skipped,
        });
    }
    let mut take = |k: &str| cols.remove(k).unwrap_or_default();
    let verdicts = vec![
        Verdict::from_values("oracle spray", take("spray"), tol.oracle_spray),
        Verdict::from_values("oracle riemann", take("riemann"), tol.oracle_riemann),
        Verdict::from_values("oracle berwald", take("berwald"), tol.oracle_berwald),
    ];
    let sampling = Sampling {
        seed,
        count,
        dim,
        region,
    };
    Ok(Report::new(
        "oracle-compare",
        Some(spec.to_json()),
        Some(sampling),
        tol,
        Body::OracleCompare {
            fd: fd.clone(),
            frames: out,
        },
        verdicts,
    ))
}
