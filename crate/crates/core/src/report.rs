//! Post-hoc aggregation of finished runs: mean/std bands across seeds, rank
//! correlation for probe results, and SVG + CSV emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::trainer::{read_rows, BurnInPoint, MetricsRow, ProbePoint, RunConfig};
use crate::{Error, Result};

/// One finished run loaded from its output directory.
#[derive(Debug, Clone)]
pub struct RunFrame {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub metrics: Vec<MetricsRow>,
    pub burn_in: Vec<BurnInPoint>,
    pub probe: Vec<ProbePoint>,
}

impl RunFrame {
    pub fn load(dir: &Path) -> Result<Self> {
        let config = RunConfig::load(&dir.join("config.toml"))?;
        let optional = |name: &str| dir.join(name).exists().then(|| dir.join(name));
        let metrics: Vec<MetricsRow> = match optional("metrics.csv") {
            Some(p) => read_rows(&p)?,
            None => Vec::new(),
        };
        if metrics.windows(2).any(|w| w[1].step <= w[0].step) {
            return Err(Error::Config(format!("{}: metric steps are not increasing", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
            burn_in: match optional("burnin.csv") {
                Some(p) => read_rows(&p)?,
                None => Vec::new(),
            },
            probe: match optional("probe.csv") {
                Some(p) => read_rows(&p)?,
                None => Vec::new(),
            },
            config,
        })
    }

    /// Runs sharing a group key differ only by seed.
    pub fn group_key(&self) -> String {
        format!(
            "{}-{}-{}-{}",
            self.config.env.as_str(),
            self.config.mode,
            backbone_name(&self.config),
            self.config.hash()
        )
    }
}

fn backbone_name(c: &RunConfig) -> &'static str {
    match c.model_config(1).backbone {
        crate::seqmodel::Backbone::Transformer => "transformer",
        crate::seqmodel::Backbone::Gru => "gru",
        crate::seqmodel::Backbone::Stateless => "stateless",
    }
}

/// Mean and population standard deviation per grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Band {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub runs: usize,
    /// Set when the runs' grids differed and values were interpolated.
    pub interpolated: bool,
}

/// Linear interpolation of `(x, y)` points at `at`, clamped at the ends.
pub fn interpolate(points: &[(f64, f64)], at: f64) -> f64 {
    assert!(!points.is_empty(), "interpolating an empty series");
    if at <= points[0].0 {
        return points[0].1;
    }
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if at <= x1 {
            return if x1 == x0 { y1 } else { y0 + (y1 - y0) * (at - x0) / (x1 - x0) };
        }
    }
    points[points.len() - 1].1
}

/// Combine series across runs. Identical grids are averaged pointwise;
/// otherwise every series is interpolated onto the grid with fewest points.
/// The result does not depend on the order of `series`.
pub fn aggregate(series: &[Vec<(f64, f64)>]) -> Option<Band> {
    let series: Vec<&Vec<(f64, f64)>> = series.iter().filter(|s| !s.is_empty()).collect();
    if series.is_empty() {
        return None;
    }
    let same = series.windows(2).all(|w| w[0].iter().map(|p| p.0).eq(w[1].iter().map(|p| p.0)));
    // Coarsest grid; ties broken by the grid itself so ordering never matters.
    let grid: Vec<f64> = series
        .iter()
        .map(|s| s.iter().map(|p| p.0).collect::<Vec<f64>>())
        .min_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)))
        .expect("nonempty");
    let n = series.len() as f64;
    let mut mean = Vec::with_capacity(grid.len());
    let mut std = Vec::with_capacity(grid.len());
    for (i, &x) in grid.iter().enumerate() {
        let mut vals: Vec<f64> = series
            .iter()
            .map(|s| if same { s[i].1 } else { interpolate(s, x) })
            .collect();
        // Sorting fixes the summation order.
        vals.sort_by(f64::total_cmp);
        let m = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        mean.push(m);
        std.push(var.sqrt());
    }
    Some(Band {
        x: grid,
        mean,
        std,
        runs: series.len(),
        interpolated: !same,
    })
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // Average rank for ties (1-based).
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `degenerate` is set (and the value is 0) when
/// either side is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spearman {
    pub rho: f64,
    pub degenerate: bool,
}

pub fn spearman(x: &[f64], y: &[f64]) -> Spearman {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Spearman {
            rho: 0.0,
            degenerate: true,
        };
    }
    Spearman {
        rho: cov / (vx * vy).sqrt(),
        degenerate: false,
    }
}

/// A curve with an optional +-std band, as drawn in a figure.
#[derive(Debug, Clone)]
pub struct Curve {
    pub label: String,
    pub band: Band,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Render line curves with shaded bands to a standalone SVG document.
pub fn line_svg(title: &str, x_label: &str, y_label: &str, curves: &[Curve]) -> String {
    let (w, h, l, r, t, b) = (640.0, 420.0, 70.0, 170.0, 40.0, 50.0);
    let pts = curves.iter().flat_map(|c| {
        c.band
            .x
            .iter()
            .zip(c.band.mean.iter().zip(&c.band.std))
            .flat_map(|(&x, (&m, &s))| [(x, m - s), (x, m + s)])
    });
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * (w - l - r);
    let sy = |y: f64| h - b - (y - y0) / (y1 - y0) * (h - t - b);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (w - r + l) / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<line x1="{l}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{l}" y1="{t}" x2="{l}" y2="{}" stroke="black"/>"#,
        h - b,
        w - r,
        h - b,
        h - b
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(fx), h - b + 16.0, tick(fx));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 6.0, sy(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (w - r + l) / 2.0, h - 10.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (h - b + t) / 2.0,
        (h - b + t) / 2.0,
        esc(y_label)
    );
    for (ci, c) in curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let band = &c.band;
        if band.std.iter().any(|&v| v > 0.0) {
            let mut poly = String::new();
            for (&x, (&m, &sd)) in band.x.iter().zip(band.mean.iter().zip(&band.std)) {
                let _ = write!(poly, "{:.2},{:.2} ", sx(x), sy(m + sd));
            }
            for (&x, (&m, &sd)) in band.x.iter().zip(band.mean.iter().zip(&band.std)).rev() {
                let _ = write!(poly, "{:.2},{:.2} ", sx(x), sy(m - sd));
            }
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, poly.trim_end());
        }
        let line: Vec<String> = band
            .x
            .iter()
            .zip(&band.mean)
            .map(|(&x, &m)| format!("{:.2},{:.2}", sx(x), sy(m)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let ly = t + 16.0 * ci as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="12" height="4" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            w - r + 10.0,
            ly,
            w - r + 26.0,
            ly + 5.0,
            esc(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter of `(x, y)` points, one colour per series.
pub fn scatter_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let curves: Vec<Curve> = series
        .iter()
        .map(|(label, pts)| {
            let mut pts = pts.clone();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Curve {
                label: label.clone(),
                band: Band {
                    x: pts.iter().map(|p| p.0).collect(),
                    mean: pts.iter().map(|p| p.1).collect(),
                    std: vec![0.0; pts.len()],
                    runs: 1,
                    interpolated: false,
                },
            }
        })
        .collect();
    // Reuse the line layout, then swap polylines for markers.
    let svg = line_svg(title, x_label, y_label, &curves);
    let mut out = String::new();
    for line in svg.lines() {
        if let Some(rest) = line.strip_prefix(r#"<polyline points=""#) {
            let (points, tail) = rest.split_once('"').expect("polyline attribute");
            let color = tail.split("stroke=\"").nth(1).and_then(|c| c.split('"').next()).unwrap_or("black");
            for p in points.split_whitespace() {
                let (x, y) = p.split_once(',').expect("point");
                let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="4" fill="{color}"/>"#);
            }
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{:.0}", v)
    } else if v.abs() >= 10.0 {
        format!("{:.1}", v)
    } else {
        format!("{:.3}", v)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Which figure family to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Returns,
    BurnIn,
    Probe,
    Ratio,
}

impl std::str::FromStr for ReportKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "returns" => Ok(Self::Returns),
            "burnin" => Ok(Self::BurnIn),
            "probe" => Ok(Self::Probe),
            "ratio" => Ok(Self::Ratio),
            other => Err(Error::Config(format!("unknown report kind `{other}`"))),
        }
    }
}

/// Files written by [`write_report`] and any omitted-plot warnings.
#[derive(Debug, Clone, Default)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// Spearman correlation per probe group (probe reports only).
    pub correlations: Vec<(String, Spearman)>,
}

#[derive(Serialize)]
struct BandRow<'a> {
    group: &'a str,
    x: f64,
    mean: f64,
    std: f64,
    runs: usize,
    interpolated: bool,
}

#[derive(Serialize)]
struct ProbeRow<'a> {
    group: &'a str,
    run: String,
    seed: u64,
    target: f64,
    psr_loss: f64,
    final_return: f64,
}

#[derive(Serialize)]
struct CorrelationRow<'a> {
    group: &'a str,
    points: usize,
    spearman: f64,
    degenerate: bool,
}

fn write_text(path: &Path, text: &str, out: &mut ReportOutput) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::at_path(path, e))?;
    out.files.push(path.to_path_buf());
    Ok(())
}

fn band_rows<'a>(group: &'a str, b: &Band) -> Vec<BandRow<'a>> {
    (0..b.x.len())
        .map(|i| BandRow {
            group,
            x: b.x[i],
            mean: b.mean[i],
            std: b.std[i],
            runs: b.runs,
            interpolated: b.interpolated,
        })
        .collect()
}

type Extract = fn(&RunFrame) -> Vec<(f64, f64)>;

fn curves_by(frames: &[RunFrame], key: impl Fn(&RunFrame) -> String, extract: Extract) -> Vec<Curve> {
    let mut groups: BTreeMap<String, Vec<Vec<(f64, f64)>>> = BTreeMap::new();
    for f in frames {
        groups.entry(key(f)).or_default().push(extract(f));
    }
    groups
        .into_iter()
        .filter_map(|(label, series)| aggregate(&series).map(|band| Curve { label, band }))
        .collect()
}

fn returns_of(f: &RunFrame) -> Vec<(f64, f64)> {
    f.metrics
        .iter()
        .filter_map(|r| r.eval_return.map(|v| (r.step as f64, v)))
        .collect()
}

fn accuracy_of(f: &RunFrame) -> Vec<(f64, f64)> {
    f.burn_in
        .iter()
        .filter(|p| p.holdout_accuracy.is_finite())
        .map(|p| (p.update as f64, p.holdout_accuracy))
        .collect()
}

fn emit_curves(
    dir: &Path,
    stem: &str,
    title: &str,
    axes: (&str, &str),
    curves: &[Curve],
    out: &mut ReportOutput,
) -> Result<()> {
    if curves.is_empty() {
        out.warnings.push(format!("{stem}: no data, plot omitted"));
        return Ok(());
    }
    let mut rows = Vec::new();
    for c in curves {
        rows.extend(band_rows(&c.label, &c.band));
    }
    let csv_path = dir.join(format!("{stem}.csv"));
    crate::trainer::write_rows(&csv_path, &rows)?;
    out.files.push(csv_path);
    write_text(&dir.join(format!("{stem}.svg")), &line_svg(title, axes.0, axes.1, curves), out)
}

fn ratio_label(c: &RunConfig) -> String {
    match c.psr_rl_ratio {
        Some(r) => format!("{r}"),
        None => format!("{}:{}", c.t_psr, c.t_rl),
    }
}

/// Emit CSV tables and SVG figures for `frames` into `dir`.
pub fn write_report(frames: &[RunFrame], kind: ReportKind, dir: &Path) -> Result<ReportOutput> {
    std::fs::create_dir_all(dir).map_err(|e| Error::at_path(dir, e))?;
    let mut out = ReportOutput::default();
    match kind {
        ReportKind::Returns => {
            let curves = curves_by(frames, RunFrame::group_key, returns_of);
            emit_curves(dir, "returns", "Greedy evaluation return", ("environment steps", "return"), &curves, &mut out)?;
        }
        ReportKind::BurnIn => {
            let curves = curves_by(frames, RunFrame::group_key, accuracy_of);
            emit_curves(
                dir,
                "burnin",
                "Held-out prediction accuracy during burn-in",
                ("prediction updates", "accuracy"),
                &curves,
                &mut out,
            )?;
        }
        ReportKind::Probe => {
            let mut rows = Vec::new();
            let mut by_group: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
            let keys: Vec<String> = frames.iter().map(RunFrame::group_key).collect();
            for (f, key) in frames.iter().zip(&keys) {
                for p in &f.probe {
                    if let (true, Some(l), Some(r)) = (p.reached, p.psr_loss, p.final_return) {
                        rows.push(ProbeRow {
                            group: key,
                            run: f.dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                            seed: f.config.seed,
                            target: p.target,
                            psr_loss: l,
                            final_return: r,
                        });
                        by_group.entry(key.clone()).or_default().push((l, r));
                    }
                }
            }
            if rows.is_empty() {
                out.warnings.push("probe: no reached targets, plot omitted".into());
                return Ok(out);
            }
            let pairs_path = dir.join("probe_pairs.csv");
            crate::trainer::write_rows(&pairs_path, &rows)?;
            out.files.push(pairs_path);
            let mut corr_rows = Vec::new();
            for (g, pts) in &by_group {
                let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
                let s = spearman(&x, &y);
                if s.degenerate {
                    out.warnings.push(format!("probe {g}: constant values, correlation degenerate"));
                }
                corr_rows.push(CorrelationRow {
                    group: g,
                    points: pts.len(),
                    spearman: s.rho,
                    degenerate: s.degenerate,
                });
                out.correlations.push((g.clone(), s));
            }
            let corr_path = dir.join("probe_correlation.csv");
            crate::trainer::write_rows(&corr_path, &corr_rows)?;
            out.files.push(corr_path);
            let series: Vec<(String, Vec<(f64, f64)>)> = by_group.into_iter().collect();
            write_text(
                &dir.join("probe.svg"),
                &scatter_svg("Prediction loss vs final return", "held-out prediction loss", "final return", &series),
                &mut out,
            )?;
        }
        ReportKind::Ratio => {
            let mut by_ratio: BTreeMap<String, Vec<&RunFrame>> = BTreeMap::new();
            for f in frames {
                by_ratio.entry(ratio_label(&f.config)).or_default().push(f);
            }
            if by_ratio.is_empty() {
                out.warnings.push("ratio: no runs, plot omitted".into());
            }
            for (ratio, runs) in by_ratio {
                let owned: Vec<RunFrame> = runs.into_iter().cloned().collect();
                let curves = curves_by(&owned, RunFrame::group_key, returns_of);
                let stem = format!("ratio_{}", ratio.replace(':', "-"));
                emit_curves(
                    dir,
                    &stem,
                    &format!("PSR:RL update ratio {ratio}"),
                    ("environment steps", "return"),
                    &curves,
                    &mut out,
                )?;
            }
        }
    }
    Ok(out)
}
