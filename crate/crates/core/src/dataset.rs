//! Wide-CSV ingestion against a hierarchy definition.

use std::io::Read;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{CrossTemporalStructure, HierarchyFile};

/// Relative tolerance for observed upper series against their bottom-up sums.
pub const COHERENCE_TOLERANCE: f64 = 1e-6;

/// An observed upper value that disagrees with the sum of its bottom series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceViolation {
    pub series: String,
    /// 0-based high-frequency time index.
    pub t: usize,
    pub observed: f64,
    pub implied: f64,
}

/// Validated high-frequency observations for every series of a hierarchy.
#[derive(Debug, Clone)]
pub struct Dataset {
    names: Vec<String>,
    series: Vec<Vec<f64>>,
    structure: CrossTemporalStructure,
    violations: Vec<CoherenceViolation>,
}

impl Dataset {
    /// Builds a dataset from named columns.
    ///
    /// Columns are matched to the hierarchy by name when it lists names and
    /// by position otherwise. Missing upper series are filled in bottom-up.
    pub fn from_columns(hierarchy: &HierarchyFile, header: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let structure = hierarchy.structure()?;
        let (n, n_a, n_b) = (structure.n(), structure.cs().n_upper(), structure.cs().n_bottom());
        let m = structure.te().m();
        let len = columns.first().map(Vec::len).unwrap_or(0);
        if len == 0 {
            return Err(Error::invalid("dataset has no observations"));
        }
        if !len.is_multiple_of(m) {
            return Err(Error::invalid(format!("length {len} not divisible by m = {m}")));
        }

        let (names, slots): (Vec<String>, Vec<Option<usize>>) = match &hierarchy.series_names {
            Some(names) => {
                if let Some(unknown) = header.iter().find(|h| !names.contains(h)) {
                    return Err(Error::invalid(format!("series '{unknown}' is not in the hierarchy")));
                }
                let slots: Vec<Option<usize>> = names.iter().map(|nm| header.iter().position(|h| h == nm)).collect();
                if let Some(i) = (n_a..n).find(|&i| slots[i].is_none()) {
                    return Err(Error::invalid(format!("bottom series '{}' missing from data", names[i])));
                }
                (names.clone(), slots)
            }
            None if header.len() == n => (header.clone(), (0..n).map(Some).collect()),
            None if header.len() == n_b => {
                let mut names: Vec<String> = (0..n_a).map(|i| format!("s{i}")).collect();
                names.extend(header.iter().cloned());
                (names, (0..n).map(|i| i.checked_sub(n_a)).collect())
            }
            None => return Err(Error::dims("data columns", format!("{n} or {n_b}"), header.len())),
        };

        let mut series = vec![Vec::new(); n];
        for i in n_a..n {
            series[i] = columns[slots[i].expect("bottom slots checked")].clone();
        }
        let agg = structure.cs().agg();
        let mut violations = Vec::new();
        for a in 0..n_a {
            let implied: Vec<f64> = (0..len)
                .map(|t| (0..n_b).map(|b| agg[(a, b)] * series[n_a + b][t]).sum())
                .collect();
            series[a] = match slots[a] {
                Some(c) => {
                    let observed = &columns[c];
                    for t in 0..len {
                        if (observed[t] - implied[t]).abs() > COHERENCE_TOLERANCE * implied[t].abs().max(1.0) {
                            violations.push(CoherenceViolation {
                                series: names[a].clone(),
                                t,
                                observed: observed[t],
                                implied: implied[t],
                            });
                        }
                    }
                    observed.clone()
                }
                None => implied,
            };
        }
        Ok(Self {
            names,
            series,
            structure,
            violations,
        })
    }

    pub fn from_reader<R: Read>(reader: R, hierarchy: &HierarchyFile) -> Result<Self> {
        let (header, columns) = read_wide_csv(reader)?;
        Self::from_columns(hierarchy, header, columns)
    }

    /// Reads the wide CSV at `csv` and the hierarchy JSON at `hierarchy`.
    pub fn ingest(csv: &Path, hierarchy: &Path) -> Result<Self> {
        let h = HierarchyFile::load(hierarchy)?;
        Self::from_reader(std::fs::File::open(csv)?, &h)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// High-frequency observations in hierarchy order (upper series first).
    pub fn series(&self) -> &[Vec<f64>] {
        &self.series
    }

    pub fn structure(&self) -> &CrossTemporalStructure {
        &self.structure
    }

    pub fn len(&self) -> usize {
        self.series[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of complete most-aggregated periods.
    pub fn periods(&self) -> usize {
        self.len() / self.structure.te().m()
    }

    pub fn coherence_violations(&self) -> &[CoherenceViolation] {
        &self.violations
    }

    /// Observations of most-aggregated period `tau` in canonical layout.
    pub fn period_vector(&self, tau: usize) -> Result<DVector<f64>> {
        if tau >= self.periods() {
            return Err(Error::invalid(format!("period {tau} out of range")));
        }
        let m = self.structure.te().m();
        let slice: Vec<Vec<f64>> = self.series.iter().map(|s| s[tau * m..(tau + 1) * m].to_vec()).collect();
        let data = crate::residuals::TemporalData::from_high_frequency(self.structure.te(), slice)?;
        Ok(DVector::from_vec(data.period_vector(&self.structure, 0)))
    }
}

/// Header plus one numeric column per series.
pub fn read_wide_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().any(String::is_empty) {
        return Err(Error::Parse {
            line: 1,
            message: "header must name every column".into(),
        });
    }
    let mut columns = vec![Vec::new(); header.len()];
    for (r, record) in rdr.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column '{}': cannot parse '{field}' as a number", header[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column '{}': non-finite value", header[c]),
                });
            }
            columns[c].push(v);
        }
    }
    Ok((header, columns))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_hierarchy(names: bool) -> HierarchyFile {
        HierarchyFile {
            agg_matrix: vec![vec![1.0, 1.0]],
            m: 4,
            series_names: names.then(|| vec!["T".into(), "X".into(), "Y".into()]),
            n_bottom: None,
        }
    }

    fn toy_csv(rows: usize) -> String {
        let mut s = String::from("T,X,Y\n");
        for t in 0..rows {
            let (x, y) = (t as f64, 2.0 * t as f64 + 1.0);
            s.push_str(&format!("{},{x},{y}\n", x + y));
        }
        s
    }

    #[test]
    fn toy_dataset_has_four_years() {
        let d = Dataset::from_reader(toy_csv(16).as_bytes(), &toy_hierarchy(true)).unwrap();
        assert_eq!(d.periods(), 4);
        assert!(d.coherence_violations().is_empty());
        let v = d.period_vector(1).unwrap();
        assert_eq!(v.len(), 21);
        assert!(d.structure().coherence_error(&v) < 1e-12);
    }

    #[test]
    fn pure_temporal_dataset() {
        let h = HierarchyFile {
            agg_matrix: vec![],
            m: 4,
            series_names: None,
            n_bottom: Some(1),
        };
        let d = Dataset::from_reader("y\n1\n2\n3\n4\n5\n6\n7\n8\n".as_bytes(), &h).unwrap();
        assert_eq!(d.structure().n(), 1);
        assert_eq!(d.periods(), 2);
        assert_eq!(d.names(), ["y"]);
    }

    #[test]
    fn length_must_be_multiple_of_m() {
        let err = Dataset::from_reader(toy_csv(15).as_bytes(), &toy_hierarchy(true)).unwrap_err();
        assert!(err.to_string().contains("not divisible by m"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Dataset::from_reader("T,X,Y\n3,1,2\n3,x,2\n".as_bytes(), &toy_hierarchy(true)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn unknown_and_missing_series() {
        let err = Dataset::from_reader("T,X,Z\n3,1,2\n3,1,2\n3,1,2\n3,1,2\n".as_bytes(), &toy_hierarchy(true)).unwrap_err();
        assert!(err.to_string().contains("'Z'"));
        let err = Dataset::from_reader("T,X\n3,1\n3,1\n3,1\n3,1\n".as_bytes(), &toy_hierarchy(true)).unwrap_err();
        assert!(err.to_string().contains("'Y'"));
    }

    #[test]
    fn upper_series_filled_and_violations_reported() {
        let d = Dataset::from_reader("X,Y\n1,2\n3,4\n5,6\n7,8\n".as_bytes(), &toy_hierarchy(true)).unwrap();
        assert_eq!(d.series()[0], vec![3.0, 7.0, 11.0, 15.0]);
        let d = Dataset::from_reader("T,X,Y\n3,1,2\n7.5,3,4\n11,5,6\n15,7,8\n".as_bytes(), &toy_hierarchy(false)).unwrap();
        assert_eq!(d.coherence_violations().len(), 1);
        assert_eq!(d.coherence_violations()[0].t, 1);
    }
}
