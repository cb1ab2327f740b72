use std::fmt::Write as _;

use serde::Serialize;

/// Column header of the trace CSV.
pub const TRACE_CSV_HEADER: &str =
    "iter,fidelity,entropy,regularizer,total,max_delta_u,volume_err,ss_violations";

/// Energy bookkeeping for one solver iterate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// `<-o, u>`
    pub fidelity: f64,
    /// `eps * <u, ln u>`
    pub entropy: f64,
    pub regularizer: f64,
    pub total: f64,
    /// `max |u_t - u_{t-1}|`; zero for the initialization record.
    pub max_delta_u: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ss_violations: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EnergyTrace {
    pub records: Vec<TraceRecord>,
}

impl EnergyTrace {
    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn totals(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.total)
    }

    /// CSV with [`TRACE_CSV_HEADER`]; inapplicable cells are left empty.
    /// Reals use the shortest round-trip representation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?},",
                r.iter, r.fidelity, r.entropy, r.regularizer, r.total, r.max_delta_u
            );
            if let Some(v) = r.volume_err {
                let _ = write!(out, "{v:?}");
            }
            out.push(',');
            if let Some(n) = r.ss_violations {
                let _ = write!(out, "{n}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_leaves_inapplicable_cells_empty() {
        let mut t = EnergyTrace::default();
        t.push(TraceRecord {
            iter: 0,
            fidelity: -1.5,
            entropy: -0.25,
            regularizer: 0.5,
            total: -1.25,
            max_delta_u: 0.0,
            volume_err: None,
            ss_violations: None,
        });
        t.push(TraceRecord {
            iter: 1,
            fidelity: -2.0,
            entropy: -0.125,
            regularizer: 0.25,
            total: -1.875,
            max_delta_u: 0.5,
            volume_err: Some(0.01),
            ss_violations: Some(3),
        });
        let csv = t.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], TRACE_CSV_HEADER);
        assert_eq!(lines[1], "0,-1.5,-0.25,0.5,-1.25,0.0,,");
        assert_eq!(lines[2], "1,-2.0,-0.125,0.25,-1.875,0.5,0.01,3");
    }
}
