//! Per-component normality testing: D'Agostino's K² omnibus test and the
//! Jarque–Bera test, both with χ²(2) p-values.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::latent::WhitenedCoeffs;

/// Smallest sample size accepted by the skewness/kurtosis transforms.
pub const MIN_SAMPLES: usize = 8;
pub const DEFAULT_ALPHAS: [f64; 2] = [0.05, 0.01];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    /// `m3 / m2^1.5`
    pub g1: f64,
    /// `m4 / m2² − 3`
    pub g2: f64,
}

/// Central moments by direct summation (population normalization `1/n`).
pub fn moments(sample: &[f64]) -> Result<MomentSummary> {
    let n = sample.len();
    if n < MIN_SAMPLES {
        return Err(Error::param(format!("normality tests need at least {MIN_SAMPLES} samples, got {n}")));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericDomain("sample contains non-finite values".into()));
    }
    if sample.iter().all(|&x| x == sample[0]) {
        return Err(Error::DegenerateSample("sample is constant".into()));
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in sample {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    if m2 <= 0.0 {
        return Err(Error::DegenerateSample("sample variance is zero".into()));
    }
    Ok(MomentSummary { n, mean, m2, m3, m4, g1: m3 / m2.powf(1.5), g2: m4 / (m2 * m2) - 3.0 })
}

/// Survival function of χ² with two degrees of freedom.
pub fn chi2_2_sf(x: f64) -> f64 {
    (-x / 2.0).exp().clamp(0.0, 1.0)
}

/// `JB = n/6 · (g1² + g2²/4)`.
pub fn jarque_bera(s: &MomentSummary) -> (f64, f64) {
    let jb = s.n as f64 / 6.0 * (s.g1 * s.g1 + s.g2 * s.g2 / 4.0);
    (jb, chi2_2_sf(jb))
}

/// D'Agostino's transform of the sample skewness to an approximately
/// standard normal deviate.
pub fn skewness_z(s: &MomentSummary) -> Result<f64> {
    if s.n < MIN_SAMPLES {
        return Err(Error::param(format!("skewness transform needs n ≥ {MIN_SAMPLES}")));
    }
    let n = s.n as f64;
    let y = s.g1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let t = y / alpha;
    Ok(delta * (t + (t * t + 1.0).sqrt()).ln())
}

/// Anscombe–Glynn transform of the sample kurtosis to an approximately
/// standard normal deviate.
pub fn kurtosis_z(s: &MomentSummary) -> Result<f64> {
    if s.n < MIN_SAMPLES {
        return Err(Error::param(format!("kurtosis transform needs n ≥ {MIN_SAMPLES}")));
    }
    let n = s.n as f64;
    let b2 = s.g2 + 3.0;
    let expected = 3.0 * (n - 1.0) / (n + 1.0);
    let var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - expected) / var.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    if denom == 0.0 {
        return Err(Error::NumericDomain("kurtosis transform denominator is zero".into()));
    }
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    Ok((term1 - term2) / (2.0 / (9.0 * a)).sqrt())
}

/// `K² = Z_skew² + Z_kurt²`.
pub fn dagostino_k2(s: &MomentSummary) -> Result<(f64, f64)> {
    let z1 = skewness_z(s)?;
    let z2 = kurtosis_z(s)?;
    let k2 = z1 * z1 + z2 * z2;
    Ok((k2, chi2_2_sf(k2)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormalityTest {
    K2,
    JarqueBera,
}

impl NormalityTest {
    pub const ALL: [NormalityTest; 2] = [NormalityTest::K2, NormalityTest::JarqueBera];

    pub fn label(&self) -> &'static str {
        match self {
            Self::K2 => "K2",
            Self::JarqueBera => "JB",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentTest {
    pub component: usize,
    pub k2_stat: f64,
    pub k2_p: f64,
    pub jb_stat: f64,
    pub jb_p: f64,
}

impl ComponentTest {
    pub fn p_value(&self, test: NormalityTest) -> f64 {
        match test {
            NormalityTest::K2 => self.k2_p,
            NormalityTest::JarqueBera => self.jb_p,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalityReport {
    pub records: Vec<ComponentTest>,
    /// Components whose column was constant; excluded from the counts.
    pub untestable: Vec<usize>,
    pub alpha_levels: Vec<f64>,
}

impl NormalityReport {
    /// Number of tested components with `p < alpha`.
    pub fn rejections(&self, test: NormalityTest, alpha: f64) -> usize {
        self.records.iter().filter(|r| r.p_value(test) < alpha).count()
    }

    /// Delimited per-component table followed by a `#`-prefixed summary of
    /// rejection counts.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("component_index\tk2_stat\tk2_p\tjb_stat\tjb_p\n");
        for r in &self.records {
            writeln!(out, "{}\t{}\t{}\t{}\t{}", r.component, r.k2_stat, r.k2_p, r.jb_stat, r.jb_p).unwrap();
        }
        out.push_str("# test");
        for a in &self.alpha_levels {
            write!(out, "\talpha={a}").unwrap();
        }
        out.push('\n');
        for test in NormalityTest::ALL {
            write!(out, "# {}", test.label()).unwrap();
            for &a in &self.alpha_levels {
                write!(out, "\t{}", self.rejections(test, a)).unwrap();
            }
            out.push('\n');
        }
        write!(out, "# untestable").unwrap();
        for c in &self.untestable {
            write!(out, "\t{c}").unwrap();
        }
        out.push('\n');
        out
    }

    /// Parses the output of [`NormalityReport::to_tsv`].
    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, what: &str| Error::Format(format!("normality report line {}: {what}", line + 1));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.starts_with("component_index") => {}
            _ => return Err(bad(0, "missing header")),
        }
        let mut records = Vec::new();
        let mut untestable = Vec::new();
        let mut alpha_levels = Vec::new();
        for (i, line) in lines {
            if let Some(summary) = line.strip_prefix("# ") {
                let mut fields = summary.split('\t');
                match fields.next() {
                    Some("test") => {
                        for f in fields {
                            let a = f.strip_prefix("alpha=").ok_or_else(|| bad(i, "bad alpha column"))?;
                            alpha_levels.push(a.parse().map_err(|_| bad(i, "bad alpha value"))?);
                        }
                    }
                    Some("untestable") => {
                        for f in fields {
                            untestable.push(f.parse().map_err(|_| bad(i, "bad component index"))?);
                        }
                    }
                    _ => {}
                }
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(i, "expected 5 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i, "bad number"));
            records.push(ComponentTest {
                component: f[0].parse().map_err(|_| bad(i, "bad component index"))?,
                k2_stat: num(f[1])?,
                k2_p: num(f[2])?,
                jb_stat: num(f[3])?,
                jb_p: num(f[4])?,
            });
        }
        Ok(Self { records, untestable, alpha_levels })
    }
}

fn check_alphas(alpha_levels: &[f64]) -> Result<()> {
    if alpha_levels.is_empty() {
        return Err(Error::param("alpha level list is empty"));
    }
    if let Some(a) = alpha_levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::param(format!("alpha level {a} is outside (0, 1)")));
    }
    Ok(())
}

/// Runs both tests on every column of `w`.
pub fn test_all_components(w: &WhitenedCoeffs, alpha_levels: &[f64]) -> Result<NormalityReport> {
    check_alphas(alpha_levels)?;
    let (n, k) = (w.batch(), w.width());
    if n < MIN_SAMPLES {
        return Err(Error::param(format!("need at least {MIN_SAMPLES} samples per component, got {n}")));
    }
    let mut records = Vec::with_capacity(k);
    let mut untestable = Vec::new();
    let mut column = vec![0.0; n];
    for c in 0..k {
        for (dst, row) in column.iter_mut().zip(w.values.data().chunks(k)) {
            *dst = row[c];
        }
        let summary = match moments(&column) {
            Ok(s) => s,
            Err(Error::DegenerateSample(_)) => {
                untestable.push(c);
                continue;
            }
            Err(e) => return Err(e),
        };
        let (k2_stat, k2_p) = dagostino_k2(&summary)?;
        let (jb_stat, jb_p) = jarque_bera(&summary);
        records.push(ComponentTest { component: c, k2_stat, k2_p, jb_stat, jb_p });
    }
    Ok(NormalityReport { records, untestable, alpha_levels: alpha_levels.to_vec() })
}

/// Plain-text table of rejection counts per test and alpha level.
pub fn report_table1(report: &NormalityReport, dataset: &str) -> Result<String> {
    check_alphas(&report.alpha_levels)?;
    if report.records.is_empty() {
        return Err(Error::param("normality report has no tested components"));
    }
    let mut out = String::new();
    let width = dataset.len().max(7);
    write!(out, "{:<width$} | {:<9} | Number of comp. rejected at", "Dataset", "Test type").unwrap();
    out.push('\n');
    write!(out, "{:<width$} | {:<9} |", "", "").unwrap();
    for a in &report.alpha_levels {
        write!(out, " {:>10}", format!("{a}-level")).unwrap();
    }
    out.push('\n');
    for (i, test) in NormalityTest::ALL.iter().enumerate() {
        let name = if i == 0 { dataset } else { "" };
        write!(out, "{:<width$} | {:<9} |", name, test.label()).unwrap();
        for &a in &report.alpha_levels {
            write!(out, " {:>10}", report.rejections(*test, a)).unwrap();
        }
        out.push('\n');
    }
    writeln!(
        out,
        "({} components tested, {} untestable)",
        report.records.len(),
        report.untestable.len()
    )
    .unwrap();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_sample_has_zero_skew() {
        let base = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let sample: Vec<f64> = base.iter().chain(base.iter()).copied().collect();
        let s = moments(&sample).unwrap();
        assert_eq!(s.g1, 0.0);
        assert_eq!(skewness_z(&s).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_and_short_samples() {
        assert!(matches!(moments(&[3.0; 10]), Err(Error::DegenerateSample(_))));
        assert!(matches!(moments(&[1.0, 2.0, 3.0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn moments_match_definitions() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let s = moments(&x).unwrap();
        let mean = 4.5;
        let m = |p: i32| x.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / 8.0;
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.m2 - m(2)).abs() < 1e-12);
        assert!((s.m3 - m(3)).abs() < 1e-12);
        assert!((s.m4 - m(4)).abs() < 1e-12);
        assert!((s.g2 - (m(4) / m(2).powi(2) - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn jarque_bera_closed_form() {
        let s = MomentSummary { n: 600, mean: 0.0, m2: 1.0, m3: 0.2, m4: 3.1, g1: 0.2, g2: 0.1 };
        let (jb, p) = jarque_bera(&s);
        assert!((jb - 4.25).abs() < 1e-9);
        assert!((p - (-2.125f64).exp()).abs() < 1e-12);
        assert!((p - 0.1194).abs() < 1e-4);

        let normal = MomentSummary { g1: 0.0, g2: 0.0, ..s };
        assert_eq!(jarque_bera(&normal), (0.0, 1.0));
    }

    #[test]
    fn k2_at_null_center() {
        let n = 5000.0;
        // the kurtosis transform is centered at E[b2] = 3(n−1)/(n+1)
        let g2 = 3.0 * (n - 1.0) / (n + 1.0) - 3.0;
        let s = MomentSummary { n: 5000, mean: 0.0, m2: 1.0, m3: 0.0, m4: g2 + 3.0, g1: 0.0, g2 };
        let (k2, p) = dagostino_k2(&s).unwrap();
        assert!(k2 < 0.01 && p > 0.5, "K² = {k2}, p = {p}");
    }

    #[test]
    fn table_rejects_empty_alphas() {
        let report = NormalityReport {
            records: vec![ComponentTest { component: 0, k2_stat: 1.0, k2_p: 0.5, jb_stat: 1.0, jb_p: 0.5 }],
            untestable: vec![],
            alpha_levels: vec![],
        };
        assert!(matches!(report_table1(&report, "MNIST"), Err(Error::Parameter(_))));
    }
}
