use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::diagnostics::{csv_err, finish};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvalSplit {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalSplit::Id => "ID",
            EvalSplit::Ood => "OOD",
        })
    }
}

impl FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "id" => Ok(EvalSplit::Id),
            "ood" => Ok(EvalSplit::Ood),
            other => Err(Error::InvalidArgument(format!("unknown split {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub client: String,
    pub value: f64,
    pub n_units: usize,
}

/// Per-client values of one metric for one model on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub split: EvalSplit,
    pub metric: String,
    pub rows: Vec<MetricRow>,
}

pub const AVERAGE_ROW: &str = "average";
const HEADER: [&str; 6] = ["model", "split", "client", "metric", "value", "n_units"];

impl MetricReport {
    /// Unweighted mean over clients.
    pub fn average(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(|r| r.value).sum::<f64>() / self.rows.len() as f64
    }

    pub fn value(&self, client: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.client == client).map(|r| r.value)
    }

    /// Columns `model,split,client,metric,value,n_units`; the last row of
    /// each report is the `average` over its clients.
    pub fn to_csv(reports: &[MetricReport]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).map_err(csv_err)?;
        for r in reports {
            let split = r.split.to_string();
            for row in &r.rows {
                w.write_record([
                    r.model.as_str(),
                    &split,
                    &row.client,
                    &r.metric,
                    &format!("{:.6}", row.value),
                    &row.n_units.to_string(),
                ])
                .map_err(csv_err)?;
            }
            let total: usize = r.rows.iter().map(|x| x.n_units).sum();
            w.write_record([
                r.model.as_str(),
                &split,
                AVERAGE_ROW,
                &r.metric,
                &format!("{:.6}", r.average()),
                &total.to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish(w)
    }

    /// Parses CSV written by [`MetricReport::to_csv`]. Average rows are
    /// recomputed rather than read.
    pub fn from_csv(text: &str) -> Result<Vec<MetricReport>> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::Csv(format!("unexpected header {headers:?}")));
        }
        let mut out: Vec<MetricReport> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let (model, split, client, metric) = (&rec[0], rec[1].parse()?, &rec[2], &rec[3]);
            if client == AVERAGE_ROW {
                continue;
            }
            let value: f64 = rec[4].parse().map_err(|e| Error::Csv(format!("value: {e}")))?;
            let n_units: usize = rec[5].parse().map_err(|e| Error::Csv(format!("n_units: {e}")))?;
            let idx = match out
                .iter()
                .position(|r| r.model == model && r.split == split && r.metric == metric)
            {
                Some(i) => i,
                None => {
                    out.push(MetricReport {
                        model: model.to_string(),
                        split,
                        metric: metric.to_string(),
                        rows: Vec::new(),
                    });
                    out.len() - 1
                }
            };
            out[idx].rows.push(MetricRow {
                client: client.to_string(),
                value,
                n_units,
            });
        }
        Ok(out)
    }
}
