//! Per-label proportions, length-versus-positive-rate fits and ambiguous
//! token listings.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::{ClientCorpus, Labels};
use crate::error::{Error, Result};

/// Label distribution of `labels` over `n_labels` classes.
pub fn proportions(labels: &[usize], n_labels: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_labels];
    for &l in labels {
        if l < n_labels {
            counts[l] += 1.0;
        }
    }
    let n = labels.len().max(1) as f64;
    counts.iter().map(|c| c / n).collect()
}

/// Total-variation distance `0.5 * sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelProportionReport {
    pub client: String,
    pub label_names: Vec<String>,
    pub models: Vec<String>,
    pub gold: Vec<f64>,
    /// `predicted[m][l]`: fraction of model `m`'s predictions with label `l`.
    pub predicted: Vec<Vec<f64>>,
    /// TV(gold, model) per model.
    pub tv: Vec<f64>,
}

pub fn label_proportion_report(
    client: &str,
    label_names: &[String],
    golds: &[usize],
    preds_by_model: &[(String, Vec<usize>)],
) -> Result<LabelProportionReport> {
    if preds_by_model.is_empty() {
        return Err(Error::InvalidArgument("need at least one model".into()));
    }
    let n = label_names.len();
    let gold = proportions(golds, n);
    let predicted: Vec<Vec<f64>> = preds_by_model.iter().map(|(_, p)| proportions(p, n)).collect();
    let tv = predicted.iter().map(|p| total_variation(&gold, p)).collect();
    Ok(LabelProportionReport {
        client: client.to_string(),
        label_names: label_names.to_vec(),
        models: preds_by_model.iter().map(|(m, _)| m.clone()).collect(),
        gold,
        predicted,
        tv,
    })
}

impl LabelProportionReport {
    pub fn tv_for(&self, model: &str) -> Option<f64> {
        self.models.iter().position(|m| m == model).map(|i| self.tv[i])
    }

    /// Columns `client,label,gold,<model>...`; one row per label and a final `TV` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["client".to_string(), "label".into(), "gold".into()];
        header.extend(self.models.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (l, name) in self.label_names.iter().enumerate() {
            let mut row = vec![self.client.clone(), name.clone(), fmt(self.gold[l])];
            row.extend(self.predicted.iter().map(|p| fmt(p[l])));
            w.write_record(&row).map_err(csv_err)?;
        }
        let mut row = vec![self.client.clone(), "TV".into(), fmt(0.0)];
        row.extend(self.tv.iter().map(|v| fmt(*v)));
        w.write_record(&row).map_err(csv_err)?;
        finish(w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LengthPoint {
    pub client: String,
    pub model: String,
    pub mean_length: f64,
    pub frac_positive: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub model: String,
    pub slope: f64,
    pub intercept: f64,
    /// All lengths equal: slope undefined and reported as 0.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LengthBiasReport {
    pub points: Vec<LengthPoint>,
    pub fits: Vec<LineFit>,
}

/// Ordinary least squares of `y` on `x`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, bool) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return (0.0, my, true);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx, false)
}

pub fn length_bias_report(points: &[LengthPoint]) -> Result<LengthBiasReport> {
    let mut by_model: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in points {
        let e = by_model.entry(&p.model).or_default();
        e.0.push(p.mean_length);
        e.1.push(p.frac_positive);
    }
    let mut fits = Vec::new();
    for (model, (x, y)) in by_model {
        if x.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "length fit for {model} needs at least 2 clients"
            )));
        }
        let (slope, intercept, degenerate) = ols(&x, &y);
        fits.push(LineFit {
            model: model.to_string(),
            slope,
            intercept,
            degenerate,
        });
    }
    Ok(LengthBiasReport {
        points: points.to_vec(),
        fits,
    })
}

impl LengthBiasReport {
    /// Columns `client,mean_length,frac_positive,model`.
    pub fn points_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["client", "mean_length", "frac_positive", "model"])
            .map_err(csv_err)?;
        for p in &self.points {
            w.write_record([
                p.client.clone(),
                fmt(p.mean_length),
                fmt(p.frac_positive),
                p.model.clone(),
            ])
            .map_err(csv_err)?;
        }
        finish(w)
    }

    /// Columns `model,slope,intercept,degenerate`.
    pub fn fits_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "slope", "intercept", "degenerate"])
            .map_err(csv_err)?;
        for f in &self.fits {
            w.write_record([
                f.model.clone(),
                fmt(f.slope),
                fmt(f.intercept),
                f.degenerate.to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish(w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClientTagView {
    pub client: String,
    pub count: usize,
    pub majority: String,
    pub distribution: Vec<f64>,
    pub divergence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AmbiguousToken {
    pub token: String,
    pub global_majority: String,
    pub global_distribution: Vec<f64>,
    /// Clients whose majority tag differs from the global one.
    pub clients: Vec<ClientTagView>,
    /// Largest TV distance between a listed client and the global distribution.
    pub divergence: f64,
}

/// Tokens whose majority tag in some client differs from their majority tag
/// over all clients, sorted by decreasing divergence. Clients with fewer than
/// `min_count` occurrences of a token are ignored for that token.
pub fn ambiguous_token_report(
    corpora: &[ClientCorpus],
    label_names: &[String],
    min_count: usize,
) -> Result<Vec<AmbiguousToken>> {
    let n = label_names.len();
    // token -> client index -> tag counts
    let mut counts: BTreeMap<&str, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    for (ci, corpus) in corpora.iter().enumerate() {
        let Some(Labels::PerToken(tags)) = &corpus.labels else {
            return Err(Error::InvalidArgument(format!(
                "client {} has no token tags",
                corpus.client_id
            )));
        };
        for (inst, inst_tags) in corpus.instances.iter().zip(tags) {
            for (tok, &tag) in inst.iter().zip(inst_tags) {
                if tag >= n {
                    return Err(Error::LabelOutOfRange { label: tag, n_labels: n });
                }
                counts
                    .entry(tok.as_str())
                    .or_default()
                    .entry(ci)
                    .or_insert_with(|| vec![0; n])[tag] += 1;
            }
        }
    }
    let normalize = |c: &[usize]| {
        let total = c.iter().sum::<usize>().max(1) as f64;
        c.iter().map(|&v| v as f64 / total).collect::<Vec<f64>>()
    };
    let mut out = Vec::new();
    for (token, per_client) in counts {
        let mut global = vec![0usize; n];
        for c in per_client.values() {
            for (g, v) in global.iter_mut().zip(c) {
                *g += v;
            }
        }
        let global_dist = normalize(&global);
        let global_major = majority(&global);
        let mut clients = Vec::new();
        for (&ci, c) in &per_client {
            let count = c.iter().sum::<usize>();
            if count < min_count || majority(c) == global_major {
                continue;
            }
            let dist = normalize(c);
            clients.push(ClientTagView {
                client: corpora[ci].client_id.clone(),
                count,
                majority: label_names[majority(c)].clone(),
                divergence: total_variation(&dist, &global_dist),
                distribution: dist,
            });
        }
        if clients.is_empty() {
            continue;
        }
        let divergence = clients.iter().map(|c| c.divergence).fold(0.0, f64::max);
        out.push(AmbiguousToken {
            token: token.to_string(),
            global_majority: label_names[global_major].clone(),
            global_distribution: global_dist,
            clients,
            divergence,
        });
    }
    out.sort_by(|a, b| b.divergence.total_cmp(&a.divergence).then_with(|| a.token.cmp(&b.token)));
    Ok(out)
}

/// Lowest index among the most frequent tags.
fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Columns `token,client,count,client_majority,global_majority,divergence,client_dist,global_dist`
/// with distributions as `;`-separated fractions in label order.
pub fn ambiguous_tokens_csv(report: &[AmbiguousToken]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "token",
        "client",
        "count",
        "client_majority",
        "global_majority",
        "divergence",
        "client_dist",
        "global_dist",
    ])
    .map_err(csv_err)?;
    let join = |v: &[f64]| v.iter().map(|x| fmt(*x)).collect::<Vec<_>>().join(";");
    for t in report {
        for c in &t.clients {
            w.write_record([
                t.token.clone(),
                c.client.clone(),
                c.count.to_string(),
                c.majority.clone(),
                t.global_majority.clone(),
                fmt(c.divergence),
                join(&c.distribution),
                join(&t.global_distribution),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

pub(crate) fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tv_cases() {
        let labels = names(&["neg", "pos"]);
        let gold = vec![0, 1, 0, 1];
        let r = label_proportion_report(
            "c0",
            &labels,
            &gold,
            &[("Base".into(), vec![0; 4]), ("KYC".into(), gold.clone())],
        )
        .unwrap();
        assert_abs_diff_eq!(r.tv_for("Base").unwrap(), 0.5);
        assert_eq!(r.tv_for("KYC").unwrap(), 0.0);
        let csv = r.to_csv().unwrap();
        assert!(csv.starts_with("client,label,gold,Base,KYC\n"));
        assert!(csv.contains("c0,TV,0.000000,0.500000,0.000000"));
        assert!(label_proportion_report("c0", &labels, &gold, &[]).is_err());
    }

    #[test]
    fn two_point_line() {
        let pts = vec![
            LengthPoint { client: "a".into(), model: "Base".into(), mean_length: 40.0, frac_positive: 0.6 },
            LengthPoint { client: "b".into(), model: "Base".into(), mean_length: 80.0, frac_positive: 0.4 },
        ];
        let r = length_bias_report(&pts).unwrap();
        assert_abs_diff_eq!(r.fits[0].slope, -0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(r.fits[0].intercept, 0.8, epsilon = 1e-12);
        assert!(!r.fits[0].degenerate);
        assert!(r.points_csv().unwrap().starts_with("client,mean_length,frac_positive,model\n"));
    }

    #[test]
    fn flat_and_degenerate_lines() {
        let mk = |l: f64, f: f64| LengthPoint { client: "x".into(), model: "M".into(), mean_length: l, frac_positive: f };
        let r = length_bias_report(&[mk(30.0, 0.5), mk(60.0, 0.5), mk(90.0, 0.5)]).unwrap();
        assert_eq!(r.fits[0].slope, 0.0);
        let r = length_bias_report(&[mk(50.0, 0.2), mk(50.0, 0.8)]).unwrap();
        assert!(r.fits[0].degenerate);
        assert_eq!(r.fits[0].slope, 0.0);
        assert!(length_bias_report(&[mk(50.0, 0.2)]).is_err());
    }

    fn tagged(id: &str, tokens: &[&str], tags: &[usize]) -> ClientCorpus {
        ClientCorpus::new(
            id,
            vec![tokens.iter().map(|s| s.to_string()).collect()],
            Some(Labels::PerToken(vec![tags.to_vec()])),
        )
        .unwrap()
    }

    #[test]
    fn ambiguous_tokens() {
        let labels = names(&["O", "A", "B"]);
        // "m": 9/10 A in c1, 9/10 B in c2 plus one more B in c3 -> global majority B.
        let mut t1 = vec!["m"; 10];
        t1.push("the");
        let mut tags1 = vec![1; 9];
        tags1.extend([2, 0]);
        let mut tags2 = vec![2; 9];
        tags2.extend([1, 0]);
        let corpora = vec![
            tagged("c1", &t1, &tags1),
            tagged("c2", &t1, &tags2),
            tagged("c3", &["m", "the"], &[2, 0]),
        ];
        let r = ambiguous_token_report(&corpora, &labels, 1).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].token, "m");
        assert_eq!(r[0].global_majority, "B");
        assert_eq!(r[0].clients[0].client, "c1");
        assert_eq!(r[0].clients[0].majority, "A");
        assert!(r[0].divergence > 0.3);
        let csv = ambiguous_tokens_csv(&r).unwrap();
        assert_eq!(csv.lines().count(), 2);
        // A count threshold above the per-client count hides the token.
        assert!(ambiguous_token_report(&corpora, &labels, 11).unwrap().is_empty());
    }
}
