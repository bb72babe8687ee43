//! Linear models with fixed effects, a gender x party interaction and
//! cluster-robust (CR1) standard errors, plus the two-model report table.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{AliasedColumn, Error, Result};
use crate::video::FaceObservation;

const ALIAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    /// Values plus an optional declared level set; undeclared factors take
    /// their levels from the data.
    Factor {
        values: Vec<Option<String>>,
        levels: Option<Vec<String>>,
    },
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Factor { values, .. } => values.len(),
        }
    }

    fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].map_or(true, |x| !x.is_finite()),
            Column::Factor { values, .. } => values[row].is_none(),
        }
    }
}

/// Column-oriented table with missing values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataFrame {
    rows: usize,
    columns: BTreeMap<String, Column>,
}

impl DataFrame {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.get(name)
    }

    fn insert(&mut self, name: &str, column: Column) -> Result<()> {
        if !self.columns.is_empty() && column.len() != self.rows {
            return Err(Error::InvalidInput(format!(
                "column `{name}` has {} rows, table has {}",
                column.len(),
                self.rows
            )));
        }
        self.rows = column.len();
        self.columns.insert(name.to_string(), column);
        Ok(())
    }

    pub fn with_numeric(mut self, name: &str, values: Vec<Option<f64>>) -> Result<Self> {
        self.insert(name, Column::Numeric(values))?;
        Ok(self)
    }

    pub fn with_factor<S: Into<String>>(mut self, name: &str, values: Vec<Option<S>>) -> Result<Self> {
        let values = values.into_iter().map(|v| v.map(Into::into)).collect();
        self.insert(name, Column::Factor { values, levels: None })?;
        Ok(self)
    }

    pub fn with_declared_factor<S: Into<String>>(
        mut self,
        name: &str,
        values: Vec<Option<S>>,
        levels: &[&str],
    ) -> Result<Self> {
        let values: Vec<Option<String>> = values.into_iter().map(|v| v.map(Into::into)).collect();
        if let Some(bad) = values.iter().flatten().find(|v| !levels.contains(&v.as_str())) {
            return Err(Error::CovariateSchema(format!("`{bad}` is not a level of `{name}`")));
        }
        let levels = Some(levels.iter().map(|s| s.to_string()).collect());
        self.insert(name, Column::Factor { values, levels })?;
        Ok(self)
    }

    /// Observation table as model data; `frame` (video id + frame id) is the cluster key.
    pub fn from_observations(rows: &[FaceObservation]) -> Result<Self> {
        DataFrame::new()
            .with_numeric("depth_position", rows.iter().map(|r| r.depth_position).collect())?
            .with_numeric("relative_size", rows.iter().map(|r| r.relative_size).collect())?
            .with_declared_factor(
                "gender",
                rows.iter().map(|r| Some(r.gender.as_str())).collect(),
                &["female", "male"],
            )?
            .with_declared_factor("party", rows.iter().map(|r| Some(r.party.as_str())).collect(), &["dem", "rep"])?
            .with_factor("candidate_id", rows.iter().map(|r| Some(r.candidate_id.clone())).collect())?
            .with_factor("election_year", rows.iter().map(|r| Some(r.election_year.to_string())).collect())?
            .with_factor(
                "candidate_visible",
                rows.iter().map(|r| Some(r.candidate_visible.to_string())).collect(),
            )?
            .with_factor("video_id", rows.iter().map(|r| Some(r.video_id.clone())).collect())?
            .with_factor(
                "frame",
                rows.iter().map(|r| Some(format!("{}/{}", r.video_id, r.frame_id))).collect(),
            )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Main(String),
    Interaction(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub outcome: String,
    pub terms: Vec<Term>,
    pub fixed_effects: Vec<String>,
    pub cluster: String,
    /// Reference level per factor; factors not listed use their first sorted level.
    pub reference_levels: BTreeMap<String, String>,
}

impl ModelSpec {
    /// `outcome ~ gender * party + FE(candidate_id, election_year, candidate_visible)`,
    /// clustered on frame, with male and dem as reference levels.
    pub fn prominence(name: &str, outcome: &str) -> Self {
        ModelSpec {
            name: name.to_string(),
            outcome: outcome.to_string(),
            terms: vec![
                Term::Main("gender".into()),
                Term::Main("party".into()),
                Term::Interaction("gender".into(), "party".into()),
            ],
            fixed_effects: vec!["candidate_id".into(), "election_year".into(), "candidate_visible".into()],
            cluster: "frame".into(),
            reference_levels: [("gender", "male"), ("party", "dem")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }

    fn variables(&self) -> Vec<&str> {
        let mut vars = vec![self.outcome.as_str(), self.cluster.as_str()];
        for t in &self.terms {
            match t {
                Term::Main(a) => vars.push(a),
                Term::Interaction(a, b) => {
                    vars.push(a);
                    vars.push(b);
                }
            }
        }
        vars.extend(self.fixed_effects.iter().map(String::as_str));
        vars
    }

    fn validate(&self, df: &DataFrame) -> Result<()> {
        for v in self.variables() {
            if df.column(v).is_none() {
                return Err(Error::MissingColumn(v.to_string()));
            }
        }
        if !matches!(df.column(&self.outcome), Some(Column::Numeric(_))) {
            return Err(Error::InvalidInput(format!("outcome `{}` must be numeric", self.outcome)));
        }
        for t in &self.terms {
            if let Term::Interaction(a, b) = t {
                for v in [a, b] {
                    if !self.terms.contains(&Term::Main(v.clone())) {
                        return Err(Error::InvalidInput(format!(
                            "interaction {a} x {b} references `{v}`, which is not a main effect"
                        )));
                    }
                }
            }
        }
        for f in &self.fixed_effects {
            if !matches!(df.column(f), Some(Column::Factor { .. })) {
                return Err(Error::InvalidInput(format!("fixed effect `{f}` must be a factor")));
            }
        }
        Ok(())
    }
}

/// Where a design column comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Intercept,
    Term,
    FixedEffect,
}

struct DesignColumn {
    name: String,
    kind: TermKind,
    values: Vec<f64>,
}

/// Dummy or numeric columns for one variable over the used rows.
fn expand(df: &DataFrame, var: &str, used: &[usize], spec: &ModelSpec) -> Vec<(String, Vec<f64>)> {
    match df.column(var).expect("validated") {
        Column::Numeric(v) => vec![(var.to_string(), used.iter().map(|&i| v[i].expect("listwise")).collect())],
        Column::Factor { values, levels } => {
            let levels: Vec<String> = match levels {
                Some(l) => {
                    let mut l = l.clone();
                    l.sort();
                    l
                }
                None => used
                    .iter()
                    .map(|&i| values[i].clone().expect("listwise"))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            };
            let reference = spec
                .reference_levels
                .get(var)
                .filter(|r| levels.contains(r))
                .cloned()
                .or_else(|| levels.first().cloned());
            levels
                .iter()
                .filter(|l| Some(*l) != reference.as_ref())
                .map(|l| {
                    let col = used
                        .iter()
                        .map(|&i| if values[i].as_deref() == Some(l.as_str()) { 1.0 } else { 0.0 })
                        .collect();
                    (format!("{var}[{l}]"), col)
                })
                .collect()
        }
    }
}

/// Model matrix, response and cluster labels after listwise deletion.
pub struct Design {
    pub names: Vec<String>,
    pub kinds: Vec<TermKind>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub clusters: Vec<String>,
    pub groups: Vec<(String, usize)>,
    pub excluded: usize,
}

pub fn build_design(df: &DataFrame, spec: &ModelSpec) -> Result<Design> {
    spec.validate(df)?;
    let vars = spec.variables();
    let used: Vec<usize> = (0..df.n_rows())
        .filter(|&i| vars.iter().all(|v| !df.column(v).expect("validated").is_missing(i)))
        .collect();
    if used.is_empty() {
        return Err(Error::EmptyTable);
    }
    let n = used.len();
    let mut cols = vec![DesignColumn {
        name: "(Intercept)".into(),
        kind: TermKind::Intercept,
        values: vec![1.0; n],
    }];
    for t in &spec.terms {
        match t {
            Term::Main(a) => cols.extend(expand(df, a, &used, spec).into_iter().map(|(name, values)| DesignColumn {
                name,
                kind: TermKind::Term,
                values,
            })),
            Term::Interaction(a, b) => {
                let ea = expand(df, a, &used, spec);
                let eb = expand(df, b, &used, spec);
                for (na, va) in &ea {
                    for (nb, vb) in &eb {
                        cols.push(DesignColumn {
                            name: format!("{na}:{nb}"),
                            kind: TermKind::Term,
                            values: va.iter().zip(vb).map(|(p, q)| p * q).collect(),
                        });
                    }
                }
            }
        }
    }
    let mut groups = Vec::new();
    for f in &spec.fixed_effects {
        let Some(Column::Factor { values, .. }) = df.column(f) else { unreachable!("validated") };
        let distinct: BTreeSet<&str> = used.iter().filter_map(|&i| values[i].as_deref()).collect();
        groups.push((f.clone(), distinct.len()));
        cols.extend(expand(df, f, &used, spec).into_iter().map(|(name, values)| DesignColumn {
            name,
            kind: TermKind::FixedEffect,
            values,
        }));
    }
    let Some(Column::Numeric(yv)) = df.column(&spec.outcome) else { unreachable!("validated") };
    let Some(Column::Factor { values: cv, .. }) = df.column(&spec.cluster) else {
        return Err(Error::InvalidInput(format!("cluster column `{}` must be a factor", spec.cluster)));
    };
    let k = cols.len();
    let x = DMatrix::from_fn(n, k, |i, j| cols[j].values[i]);
    Ok(Design {
        names: cols.iter().map(|c| c.name.clone()).collect(),
        kinds: cols.iter().map(|c| c.kind).collect(),
        x,
        y: DVector::from_iterator(n, used.iter().map(|&i| yv[i].expect("listwise"))),
        clusters: used.iter().map(|&i| cv[i].clone().expect("listwise")).collect(),
        groups,
        excluded: df.n_rows() - n,
    })
}

/// Columns that are linear combinations of earlier columns, each named with
/// the earlier columns it depends on.
pub fn aliased_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<AliasedColumn> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    let mut aliased = Vec::new();
    for k in 0..x.ncols() {
        let col = x.column(k).into_owned();
        let norm = col.norm();
        let mut v = col.clone();
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let rest = v.norm();
        if norm == 0.0 || rest <= ALIAS_TOL * norm {
            let collinear_with = if norm == 0.0 || kept.is_empty() {
                Vec::new()
            } else {
                let sub = DMatrix::from_fn(x.nrows(), kept.len(), |i, j| x[(i, kept[j])]);
                let coef = sub.clone().svd(true, true).solve(&col, 1e-12).expect("thin SVD");
                let scale = coef.amax();
                kept.iter()
                    .zip(coef.iter())
                    .filter(|(_, c)| c.abs() > 1e-8 * scale.max(1.0))
                    .map(|(&j, _)| names[j].clone())
                    .collect()
            };
            aliased.push(AliasedColumn {
                column: names[k].clone(),
                collinear_with,
            });
        } else {
            basis.push(v / rest);
            kept.push(k);
        }
    }
    aliased
}

/// Full-rank least-squares state shared by the variance estimators.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    /// `(X'X)^-1`
    pub bread: DMatrix<f64>,
    x: DMatrix<f64>,
}

impl LeastSquares {
    /// Householder QR solve; rank deficiency is reported with the aliased columns.
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::EmptyTable);
        }
        if x.nrows() != y.len() || names.len() != x.ncols() {
            return Err(Error::InvalidInput("design dimensions do not match".into()));
        }
        let aliased = aliased_columns(x, names);
        if !aliased.is_empty() || x.nrows() < x.ncols() {
            return Err(Error::RankDeficient { aliased });
        }
        let qr = x.clone().qr();
        let r = qr.r();
        let qty = qr.q().transpose() * y;
        let coefficients = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient { aliased: vec![] })?;
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(x.ncols(), x.ncols()))
            .ok_or(Error::RankDeficient { aliased: vec![] })?;
        let bread = &r_inv * r_inv.transpose();
        let residuals = y - x * &coefficients;
        Ok(LeastSquares {
            coefficients,
            residuals,
            bread,
            x: x.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn deviance(&self) -> f64 {
        self.residuals.norm_squared()
    }

    /// CR1 sandwich `c (X'X)^-1 [sum_g X_g' e_g e_g' X_g] (X'X)^-1`,
    /// `c = G/(G-1) * (N-1)/(N-K)`.
    pub fn clustered_vcov<S: AsRef<str>>(&self, cluster_ids: &[S]) -> Result<DMatrix<f64>> {
        if cluster_ids.len() != self.n() {
            return Err(Error::InvalidInput("one cluster id per row is required".into()));
        }
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for id in cluster_ids {
            let next = index.len();
            index.entry(id.as_ref()).or_insert(next);
        }
        let g = index.len();
        if g < 2 {
            return Err(Error::SingleCluster(g));
        }
        let k = self.k();
        let mut scores = DMatrix::<f64>::zeros(g, k);
        for (i, id) in cluster_ids.iter().enumerate() {
            let gi = index[id.as_ref()];
            let e = self.residuals[i];
            for j in 0..k {
                scores[(gi, j)] += self.x[(i, j)] * e;
            }
        }
        let meat = scores.transpose() * &scores;
        let (n, g) = (self.n() as f64, g as f64);
        let c = g / (g - 1.0) * (n - 1.0) / (n - k as f64);
        let v = &self.bread * meat * &self.bread * c;
        Ok((&v + v.transpose()) * 0.5)
    }
}

/// Standard errors from a covariance matrix.
pub fn clustered_se<S: AsRef<str>>(fit: &LeastSquares, cluster_ids: &[S]) -> Result<Vec<f64>> {
    let v = fit.clustered_vcov(cluster_ids)?;
    Ok((0..v.nrows()).map(|j| v[(j, j)].max(0.0).sqrt()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    pub term: String,
    pub kind: TermKind,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionResult {
    pub model: String,
    pub outcome: String,
    pub coefficients: Vec<Coefficient>,
    pub n_obs: usize,
    pub excluded: usize,
    /// Distinct levels per fixed-effect factor.
    pub groups: Vec<(String, usize)>,
    pub n_clusters: usize,
    pub deviance: f64,
    pub null_deviance: f64,
    pub log_likelihood: f64,
    pub pseudo_r2: f64,
    pub vcov: DMatrix<f64>,
}

impl RegressionResult {
    pub fn coefficient(&self, term: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.term == term)
    }
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Gaussian log-likelihood at the MLE variance `RSS / N`.
pub fn gaussian_log_likelihood(deviance: f64, n: usize) -> f64 {
    let n = n as f64;
    -0.5 * n * ((2.0 * std::f64::consts::PI * deviance / n).ln() + 1.0)
}

/// Fits the model by least squares with dummy-expanded fixed effects; SEs are
/// CR1 clustered on `spec.cluster`, p-values use a t distribution with G-1 df.
pub fn fit_fe_ols(df: &DataFrame, spec: &ModelSpec) -> Result<RegressionResult> {
    let design = build_design(df, spec)?;
    let fit = LeastSquares::fit(&design.x, &design.y, &design.names)?;
    let vcov = fit.clustered_vcov(&design.clusters)?;
    let n_clusters = design.clusters.iter().collect::<BTreeSet<_>>().len();
    let df_t = (n_clusters - 1) as f64;
    let coefficients = design
        .names
        .iter()
        .zip(&design.kinds)
        .enumerate()
        .map(|(j, (name, &kind))| {
            let estimate = fit.coefficients[j];
            let se = vcov[(j, j)].max(0.0).sqrt();
            let t = if se > 0.0 {
                estimate / se
            } else if estimate == 0.0 {
                f64::NAN
            } else {
                estimate.signum() * f64::INFINITY
            };
            Coefficient {
                term: name.clone(),
                kind,
                estimate,
                se,
                t,
                p: two_sided_p(t, df_t),
            }
        })
        .collect();
    let n = fit.n();
    let mean = design.y.mean();
    let null_deviance = design.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let deviance = fit.deviance();
    let pseudo_r2 = if null_deviance > 0.0 { 1.0 - deviance / null_deviance } else { f64::NAN };
    Ok(RegressionResult {
        model: spec.name.clone(),
        outcome: spec.outcome.clone(),
        coefficients,
        n_obs: n,
        excluded: design.excluded,
        groups: design.groups,
        n_clusters,
        deviance,
        null_deviance,
        log_likelihood: gaussian_log_likelihood(deviance, n),
        pseudo_r2,
        vcov,
    })
}

/// Title-cased display name: `candidate_id` -> `Candidate ID`.
pub fn display_variable(name: &str) -> String {
    name.split('_')
        .map(|w| match w {
            "id" => "ID".to_string(),
            _ => {
                let mut c = w.chars();
                c.next()
                    .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
                    .unwrap_or_default()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn display_level(level: &str) -> String {
    match level {
        "rep" => "Republican".into(),
        "dem" => "Democrat".into(),
        other => display_variable(other),
    }
}

/// `gender[female]:party[rep]` -> `Gender: Female x Party: Republican`.
pub fn display_term(term: &str) -> String {
    term.split(':')
        .map(|part| match part.split_once('[') {
            Some((var, level)) => format!(
                "{}: {}",
                display_variable(var),
                display_level(level.trim_end_matches(']'))
            ),
            None => display_variable(part),
        })
        .collect::<Vec<_>>()
        .join(" x ")
}

fn fixed2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// `0.48*** (0.05)`
pub fn format_coefficient(estimate: f64, se: f64, p: f64) -> String {
    format!("{}{} ({})", fixed2(estimate), stars(p), fixed2(se))
}

/// Row labels by cell, one column per model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub models: Vec<String>,
    pub rows: Vec<(String, Vec<String>)>,
}

/// Union of reported terms (first-seen order), then observation counts,
/// fixed-effect group counts and fit diagnostics.
pub fn report_table(results: &[&RegressionResult]) -> ReportTable {
    let mut terms: Vec<&str> = Vec::new();
    for r in results {
        for c in r.coefficients.iter().filter(|c| c.kind == TermKind::Term) {
            if !terms.contains(&c.term.as_str()) {
                terms.push(&c.term);
            }
        }
    }
    let mut rows: Vec<(String, Vec<String>)> = terms
        .iter()
        .map(|t| {
            let cells = results
                .iter()
                .map(|r| {
                    r.coefficient(t)
                        .map(|c| format_coefficient(c.estimate, c.se, c.p))
                        .unwrap_or_default()
                })
                .collect();
            (display_term(t), cells)
        })
        .collect();
    rows.push(("Num. obs.".into(), results.iter().map(|r| r.n_obs.to_string()).collect()));
    let factors: BTreeSet<String> = results
        .iter()
        .flat_map(|r| r.groups.iter().map(|(f, _)| display_variable(f)))
        .collect();
    for f in factors {
        let cells = results
            .iter()
            .map(|r| {
                r.groups
                    .iter()
                    .find(|(g, _)| display_variable(g) == f)
                    .map(|(_, n)| n.to_string())
                    .unwrap_or_default()
            })
            .collect();
        rows.push((format!("Num. groups: {f}"), cells));
    }
    rows.push(("Deviance".into(), results.iter().map(|r| fixed2(r.deviance)).collect()));
    rows.push(("Log Likelihood".into(), results.iter().map(|r| fixed2(r.log_likelihood)).collect()));
    rows.push(("Pseudo R^2".into(), results.iter().map(|r| fixed2(r.pseudo_r2)).collect()));
    ReportTable {
        models: results.iter().map(|r| r.model.clone()).collect(),
        rows,
    }
}

impl ReportTable {
    pub fn to_text(&self) -> String {
        let label_w = self.rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let widths: Vec<usize> = (0..self.models.len())
            .map(|j| {
                self.rows
                    .iter()
                    .map(|(_, c)| c[j].len())
                    .chain([self.models[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |label: &str, cells: &[String]| {
            let mut s = format!("{label:<label_w$}");
            for (cell, w) in cells.iter().zip(&widths) {
                s.push_str(&format!("  {cell:>w$}"));
            }
            s.trim_end().to_string() + "\n"
        };
        let rule = "-".repeat(label_w + widths.iter().map(|w| w + 2).sum::<usize>()) + "\n";
        let n_terms = self.rows.iter().take_while(|(l, _)| l != "Num. obs.").count();
        let mut out = rule.clone();
        out.push_str(&line("", &self.models));
        out.push_str(&rule);
        for (i, (label, cells)) in self.rows.iter().enumerate() {
            if i == n_terms {
                out.push_str(&rule);
            }
            out.push_str(&line(label, cells));
        }
        out.push_str(&rule);
        out.push_str("***p < 0.001; **p < 0.01; *p < 0.05\n");
        out
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(std::iter::once("").chain(self.models.iter().map(String::as_str)))?;
        for (label, cells) in &self.rows {
            w.write_record(std::iter::once(label.as_str()).chain(cells.iter().map(String::as_str)))?;
        }
        w.flush().map_err(|e| Error::io("<report csv>", e))?;
        Ok(())
    }
}

/// Dot-and-whisker data: `model,term,estimate,se` for the reported terms.
pub fn write_plot_csv(out: impl Write, results: &[&RegressionResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "term", "estimate", "se"])?;
    for r in results {
        for c in r.coefficients.iter().filter(|c| c.kind == TermKind::Term) {
            w.write_record([
                r.model.clone(),
                display_term(&c.term),
                c.estimate.to_string(),
                c.se.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<plot csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn perfect_fit() {
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(6, |i, _| 2.0 + 3.0 * i as f64);
        let fit = LeastSquares::fit(&x, &y, &names(2)).unwrap();
        assert!(fit.deviance() < 1e-20);
        assert!((fit.coefficients[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_column_is_named() {
        let x = DMatrix::from_fn(6, 3, |i, j| match j {
            0 => 1.0,
            _ => (i * i) as f64,
        });
        let y = DVector::from_fn(6, |i, _| i as f64);
        let names = vec!["(Intercept)".to_string(), "a".into(), "b".into()];
        match LeastSquares::fit(&x, &y, &names) {
            Err(Error::RankDeficient { aliased }) => {
                assert_eq!(aliased.len(), 1);
                assert_eq!(aliased[0].column, "b");
                assert_eq!(aliased[0].collinear_with, vec!["a".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = DMatrix::from_fn(12, 4, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-2.0..2.0) });
        let truth = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.25]);
        let exact = &x * &truth;
        let fit = LeastSquares::fit(&x, &exact, &names(4)).unwrap();
        assert!((fit.coefficients.clone() - &truth).amax() < 1e-12);

        let noisy = exact + DVector::from_fn(12, |_, _| rng.gen_range(-0.3..0.3));
        let fit = LeastSquares::fit(&x, &noisy, &names(4)).unwrap();
        let xtx = x.transpose() * &x;
        let oracle = xtx.lu().solve(&(x.transpose() * &noisy)).unwrap();
        assert!((fit.coefficients - oracle).amax() < 1e-10);
    }

    #[test]
    fn singleton_clusters_equal_hc1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) });
        let y = DVector::from_fn(n, |i, _| x[(i, 1)] * (1.0 + rng.gen_range(-1.0..1.0)));
        let fit = LeastSquares::fit(&x, &y, &names(3)).unwrap();
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let v = fit.clustered_vcov(&ids).unwrap();
        let mut meat = DMatrix::zeros(3, 3);
        for i in 0..n {
            let xi = x.row(i).transpose();
            meat += &xi * xi.transpose() * fit.residuals[i].powi(2);
        }
        let inv = (x.transpose() * &x).try_inverse().unwrap();
        let hc1 = &inv * meat * &inv * (n as f64 / (n as f64 - 3.0));
        assert!((v - hc1).amax() < 1e-10);
    }

    #[test]
    fn single_cluster_is_an_error() {
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(5, |i, _| (i * i) as f64);
        let fit = LeastSquares::fit(&x, &y, &names(2)).unwrap();
        assert!(matches!(fit.clustered_vcov(&["a"; 5]), Err(Error::SingleCluster(1))));
    }

    fn fe_frame(seed: u64, n: usize) -> DataFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.5 * x[i] + g[i] as f64 * 0.7 + rng.gen_range(-0.5..0.5))
            .collect();
        DataFrame::new()
            .with_numeric("y", y.into_iter().map(Some).collect())
            .unwrap()
            .with_numeric("x", x.into_iter().map(Some).collect())
            .unwrap()
            .with_factor("g", g.iter().map(|v| Some(format!("g{v}"))).collect())
            .unwrap()
            .with_factor("cl", (0..n).map(|i| Some(format!("c{}", i % 7))).collect())
            .unwrap()
    }

    fn fe_spec() -> ModelSpec {
        ModelSpec {
            name: "m".into(),
            outcome: "y".into(),
            terms: vec![Term::Main("x".into())],
            fixed_effects: vec!["g".into()],
            cluster: "cl".into(),
            reference_levels: BTreeMap::new(),
        }
    }

    #[test]
    fn dummies_match_within_demeaning() {
        let df = fe_frame(9, 80);
        let res = fit_fe_ols(&df, &fe_spec()).unwrap();
        let Some(Column::Numeric(y)) = df.column("y") else { panic!() };
        let Some(Column::Numeric(x)) = df.column("x") else { panic!() };
        let Some(Column::Factor { values: g, .. }) = df.column("g") else { panic!() };
        let mut sums: BTreeMap<&str, (f64, f64, f64)> = BTreeMap::new();
        for i in 0..80 {
            let e = sums.entry(g[i].as_deref().unwrap()).or_default();
            e.0 += y[i].unwrap();
            e.1 += x[i].unwrap();
            e.2 += 1.0;
        }
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for i in 0..80 {
            let (sy, sx, c) = sums[g[i].as_deref().unwrap()];
            let xd = x[i].unwrap() - sx / c;
            sxy += xd * (y[i].unwrap() - sy / c);
            sxx += xd * xd;
        }
        assert!((res.coefficient("x").unwrap().estimate - sxy / sxx).abs() < 1e-8);
        assert_eq!(res.groups, vec![("g".to_string(), 4)]);
    }

    #[test]
    fn sandwich_is_psd_and_row_order_free() {
        let df = fe_frame(21, 60);
        let res = fit_fe_ols(&df, &fe_spec()).unwrap();
        let eig = res.vcov.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-10));

        let perm: Vec<usize> = (0..60).map(|i| (i * 37) % 60).collect();
        let pick = |name: &str| match df.column(name).unwrap() {
            Column::Numeric(v) => Column::Numeric(perm.iter().map(|&i| v[i]).collect()),
            Column::Factor { values, levels } => Column::Factor {
                values: perm.iter().map(|&i| values[i].clone()).collect(),
                levels: levels.clone(),
            },
        };
        let mut shuffled = DataFrame::new();
        for name in ["y", "x", "g", "cl"] {
            shuffled.insert(name, pick(name)).unwrap();
        }
        let other = fit_fe_ols(&shuffled, &fe_spec()).unwrap();
        for (a, b) in res.coefficients.iter().zip(&other.coefficients) {
            assert!((a.estimate - b.estimate).abs() < 1e-10);
            assert!((a.se - b.se).abs() < 1e-10);
        }
        assert!((res.deviance - other.deviance).abs() < 1e-9);
        assert!((res.log_likelihood - other.log_likelihood).abs() < 1e-9);
    }

    #[test]
    fn listwise_deletion_and_missing_columns() {
        let df = DataFrame::new()
            .with_numeric("y", vec![Some(1.0), None, Some(3.0), Some(2.0), Some(5.0)])
            .unwrap()
            .with_numeric("x", vec![Some(1.0), Some(2.0), Some(2.5), Some(4.0), Some(4.5)])
            .unwrap()
            .with_factor("cl", vec![Some("a"), Some("a"), Some("b"), None, Some("b")])
            .unwrap();
        let spec = ModelSpec {
            name: "m".into(),
            outcome: "y".into(),
            terms: vec![Term::Main("x".into())],
            fixed_effects: vec![],
            cluster: "cl".into(),
            reference_levels: BTreeMap::new(),
        };
        let res = fit_fe_ols(&df, &spec).unwrap();
        assert_eq!((res.n_obs, res.excluded), (3, 2));
        let missing = ModelSpec {
            cluster: "nope".into(),
            ..spec
        };
        assert!(matches!(fit_fe_ols(&df, &missing), Err(Error::MissingColumn(c)) if c == "nope"));
    }

    #[test]
    fn absent_level_aliases_interaction() {
        // no female faces at all: the female dummy and the interaction are zero columns
        let n = 12;
        let df = DataFrame::new()
            .with_numeric("y", (0..n).map(|i| Some(i as f64 * 0.1)).collect())
            .unwrap()
            .with_declared_factor("gender", vec![Some("male"); n], &["female", "male"])
            .unwrap()
            .with_declared_factor(
                "party",
                (0..n).map(|i| Some(if i % 2 == 0 { "dem" } else { "rep" })).collect(),
                &["dem", "rep"],
            )
            .unwrap()
            .with_factor("frame", (0..n).map(|i| Some(format!("f{}", i % 4))).collect())
            .unwrap();
        let spec = ModelSpec {
            fixed_effects: vec![],
            ..ModelSpec::prominence("m", "y")
        };
        match fit_fe_ols(&df, &spec) {
            Err(Error::RankDeficient { aliased }) => {
                let cols: Vec<&str> = aliased.iter().map(|a| a.column.as_str()).collect();
                assert_eq!(cols, vec!["gender[female]", "gender[female]:party[rep]"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn term_labels() {
        assert_eq!(display_term("gender[female]"), "Gender: Female");
        assert_eq!(display_term("party[rep]"), "Party: Republican");
        assert_eq!(display_term("gender[female]:party[rep]"), "Gender: Female x Party: Republican");
        assert_eq!(display_variable("candidate_visible"), "Candidate Visible");
        assert_eq!(display_variable("candidate_id"), "Candidate ID");
    }

    #[test]
    fn coefficient_formatting() {
        assert_eq!(format_coefficient(0.48, 0.05, 1e-6), "0.48*** (0.05)");
        assert_eq!(format_coefficient(0.43, 0.19, 0.03), "0.43* (0.19)");
        assert_eq!(format_coefficient(0.1, 0.2, 0.2), "0.10 (0.20)");
        assert_eq!(format_coefficient(-0.001, 0.04, 0.9), "0.00 (0.04)");
    }

    #[test]
    fn gaussian_log_likelihood_closed_form() {
        // some GLM routines report this value minus one (the variance parameter's AIC term)
        assert!((gaussian_log_likelihood(256012.58, 67575) - 1.0 - -140890.33).abs() < 0.01);
        assert!((gaussian_log_likelihood(633213.82, 67616) - 1.0 - -171571.21).abs() < 0.01);
    }
}
