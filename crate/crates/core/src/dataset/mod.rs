//! QoS records, region codebooks, density splits and synthetic data.

mod io;
mod parse;
mod report;
mod split;
mod synth;
mod wsdream_like;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_records_csv, write_records_csv, RECORD_CSV_HEADER};
pub use parse::{parse_files, parse_matrix, ParseOptions, ParsedDataset};
pub use report::{distribution_report, DistributionReport};
pub use split::{make_splits, DensitySplit, SplitCounts};
pub use synth::{synthesize, SynthOutput, SynthSpec};
pub use wsdream_like::{wsdream_like, WsDreamLike, WsDreamLikeSpec};

/// One observed invocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosRecord {
    pub user_id: usize,
    pub service_id: usize,
    pub value: f64,
    pub user_city: usize,
    pub user_as: usize,
    pub service_city: usize,
    pub service_as: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    UserCity,
    UserAs,
    ServiceCity,
    ServiceAs,
}

/// Raw region labels mapped to dense indices in sorted label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCodebook {
    pub kind: RegionKind,
    labels: Vec<String>,
    #[serde(skip)]
    raw_to_index: BTreeMap<String, usize>,
}

impl RegionCodebook {
    pub fn from_labels<'a>(kind: RegionKind, labels: impl IntoIterator<Item = &'a str>) -> Self {
        let raw_to_index: BTreeMap<String, usize> = labels
            .into_iter()
            .map(|s| (s.to_string(), 0))
            .collect::<BTreeMap<_, _>>()
            .into_keys()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        let labels = raw_to_index.keys().cloned().collect();
        Self {
            kind,
            labels,
            raw_to_index,
        }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.raw_to_index.get(label).copied()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn rebuild_index(&mut self) {
        self.raw_to_index = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebooks {
    pub user_city: RegionCodebook,
    pub user_as: RegionCodebook,
    pub service_city: RegionCodebook,
    pub service_as: RegionCodebook,
}

/// Sizes of every id space a record indexes into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetDims {
    pub n_users: usize,
    pub n_services: usize,
    pub n_user_cities: usize,
    pub n_user_as: usize,
    pub n_service_cities: usize,
    pub n_service_as: usize,
}

impl DatasetDims {
    /// Smallest dims covering every index in `records`.
    pub fn covering(records: &[QosRecord]) -> Self {
        let mut d = DatasetDims {
            n_users: 0,
            n_services: 0,
            n_user_cities: 0,
            n_user_as: 0,
            n_service_cities: 0,
            n_service_as: 0,
        };
        for r in records {
            d.n_users = d.n_users.max(r.user_id + 1);
            d.n_services = d.n_services.max(r.service_id + 1);
            d.n_user_cities = d.n_user_cities.max(r.user_city + 1);
            d.n_user_as = d.n_user_as.max(r.user_as + 1);
            d.n_service_cities = d.n_service_cities.max(r.service_city + 1);
            d.n_service_as = d.n_service_as.max(r.service_as + 1);
        }
        d
    }

    pub fn check(&self, r: &QosRecord) -> Result<()> {
        let checks = [
            ("user id", r.user_id, self.n_users),
            ("service id", r.service_id, self.n_services),
            ("user city", r.user_city, self.n_user_cities),
            ("user AS", r.user_as, self.n_user_as),
            ("service city", r.service_city, self.n_service_cities),
            ("service AS", r.service_as, self.n_service_as),
        ];
        for (what, index, size) in checks {
            if index >= size {
                return Err(Error::OutOfRange { what, index, size });
            }
        }
        Ok(())
    }
}

/// Everything needed to rebuild a record for an arbitrary (user, service)
/// pair: dims, codebooks and the region codes of each user and service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dims: DatasetDims,
    pub codebooks: Codebooks,
    /// `(city, as)` per user id.
    pub user_regions: Vec<(usize, usize)>,
    /// `(city, as)` per service id.
    pub service_regions: Vec<(usize, usize)>,
}

impl DatasetMeta {
    /// Record skeleton for a query pair, with `value` set to 0.
    pub fn query(&self, user: usize, service: usize) -> Result<QosRecord> {
        let &(user_city, user_as) = self.user_regions.get(user).ok_or(Error::OutOfRange {
            what: "user id",
            index: user,
            size: self.user_regions.len(),
        })?;
        let &(service_city, service_as) =
            self.service_regions.get(service).ok_or(Error::OutOfRange {
                what: "service id",
                index: service,
                size: self.service_regions.len(),
            })?;
        Ok(QosRecord {
            user_id: user,
            service_id: service,
            value: 0.0,
            user_city,
            user_as,
            service_city,
            service_as,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut meta: DatasetMeta = serde_json::from_str(text)?;
        for cb in [
            &mut meta.codebooks.user_city,
            &mut meta.codebooks.user_as,
            &mut meta.codebooks.service_city,
            &mut meta.codebooks.service_as,
        ] {
            cb.rebuild_index();
        }
        Ok(meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codebook_is_sorted_and_order_independent() {
        let a = RegionCodebook::from_labels(RegionKind::UserCity, ["Paris", "Berlin", "Paris", "Austin"]);
        let b = RegionCodebook::from_labels(RegionKind::UserCity, ["Austin", "Paris", "Berlin"]);
        assert_eq!(a, b);
        assert_eq!(a.size(), 3);
        assert_eq!(a.index("Austin"), Some(0));
        assert_eq!(a.index("Paris"), Some(2));
        assert_eq!(a.label(1), Some("Berlin"));
        assert_eq!(a.index("Rome"), None);
    }

    #[test]
    fn dims_check_flags_out_of_range() {
        let r = QosRecord {
            user_id: 1,
            service_id: 0,
            value: 1.0,
            user_city: 0,
            user_as: 0,
            service_city: 2,
            service_as: 0,
        };
        let dims = DatasetDims::covering(&[r]);
        assert_eq!(dims.n_users, 2);
        assert_eq!(dims.n_service_cities, 3);
        assert!(dims.check(&r).is_ok());
        let bad = QosRecord { service_as: 5, ..r };
        assert!(matches!(dims.check(&bad), Err(Error::OutOfRange { .. })));
    }
}
