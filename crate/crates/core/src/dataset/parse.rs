use std::path::Path;

use super::{Codebooks, DatasetDims, DatasetMeta, QosRecord, RegionCodebook, RegionKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParseOptions {
    /// Cell value marking a missing observation.
    pub missing_sentinel: f64,
    /// Values above this are dropped.
    pub value_cap: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            missing_sentinel: -1.0,
            value_cap: 20.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParsedDataset {
    pub records: Vec<QosRecord>,
    pub meta: DatasetMeta,
    pub missing: usize,
    pub dropped_over_cap: usize,
    pub dropped_nonpositive: usize,
}

struct MetaRow {
    city: String,
    asn: String,
}

/// Parses `id <TAB> city <TAB> as` lines. A first line whose id field is
/// not an integer is treated as a header.
fn parse_meta(name: &str, text: &str) -> Result<Vec<MetaRow>> {
    let mut rows: Vec<Option<MetaRow>> = Vec::new();
    let err = |line: usize, msg: String| Error::Parse {
        path: name.to_string(),
        line,
        msg,
    };
    let mut seen_content = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let first_content = !seen_content;
        seen_content = true;
        let id: usize = match fields[0].parse() {
            Ok(id) => id,
            Err(_) if first_content => continue,
            Err(_) => return Err(err(line_no, format!("bad id `{}`", fields[0]))),
        };
        if fields.len() < 3 {
            return Err(err(line_no, "expected `id<TAB>city<TAB>as`".into()));
        }
        if id >= rows.len() {
            rows.resize_with(id + 1, || None);
        }
        if rows[id].is_some() {
            return Err(err(line_no, format!("duplicate id {id}")));
        }
        rows[id] = Some(MetaRow {
            city: fields[1].to_string(),
            asn: fields[2].to_string(),
        });
    }
    rows.into_iter()
        .enumerate()
        .map(|(id, r)| {
            r.ok_or_else(|| Error::Dimension(format!("{name}: id {id} missing (ids must be 0..n)")))
        })
        .collect()
}

/// Parses a dense whitespace-separated matrix (one user per line) plus the
/// user and service region tables.
///
/// Cells equal to the sentinel are skipped. Remaining cells must satisfy
/// `0 < value <= value_cap`; others are dropped and counted.
pub fn parse_matrix(
    matrix_text: &str,
    user_meta: &str,
    service_meta: &str,
    opts: ParseOptions,
) -> Result<ParsedDataset> {
    parse_named(
        ("matrix", matrix_text),
        ("user_meta", user_meta),
        ("service_meta", service_meta),
        opts,
    )
}

/// File-path variant of [`parse_matrix`]; errors carry the file names.
pub fn parse_files(
    matrix: &Path,
    user_meta: &Path,
    service_meta: &Path,
    opts: ParseOptions,
) -> Result<ParsedDataset> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let (m, u, s) = (read(matrix)?, read(user_meta)?, read(service_meta)?);
    parse_named(
        (&matrix.display().to_string(), &m),
        (&user_meta.display().to_string(), &u),
        (&service_meta.display().to_string(), &s),
        opts,
    )
}

fn parse_named(
    (matrix_name, matrix_text): (&str, &str),
    (user_name, user_text): (&str, &str),
    (service_name, service_text): (&str, &str),
    opts: ParseOptions,
) -> Result<ParsedDataset> {
    let users = parse_meta(user_name, user_text)?;
    let services = parse_meta(service_name, service_text)?;

    let codebooks = Codebooks {
        user_city: RegionCodebook::from_labels(RegionKind::UserCity, users.iter().map(|r| r.city.as_str())),
        user_as: RegionCodebook::from_labels(RegionKind::UserAs, users.iter().map(|r| r.asn.as_str())),
        service_city: RegionCodebook::from_labels(
            RegionKind::ServiceCity,
            services.iter().map(|r| r.city.as_str()),
        ),
        service_as: RegionCodebook::from_labels(
            RegionKind::ServiceAs,
            services.iter().map(|r| r.asn.as_str()),
        ),
    };
    let code = |cb: &RegionCodebook, label: &str| cb.index(label).expect("label is in its codebook");
    let user_regions: Vec<(usize, usize)> = users
        .iter()
        .map(|r| (code(&codebooks.user_city, &r.city), code(&codebooks.user_as, &r.asn)))
        .collect();
    let service_regions: Vec<(usize, usize)> = services
        .iter()
        .map(|r| {
            (
                code(&codebooks.service_city, &r.city),
                code(&codebooks.service_as, &r.asn),
            )
        })
        .collect();

    let mut records = Vec::new();
    let (mut missing, mut over_cap, mut nonpositive) = (0, 0, 0);
    let mut row = 0;
    for (i, line) in matrix_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if row >= users.len() {
            return Err(Error::Dimension(format!(
                "{matrix_name} has more rows than the {} users in {user_name}",
                users.len()
            )));
        }
        let mut col = 0;
        for tok in line.split_whitespace() {
            let value: f64 = tok.parse().map_err(|_| Error::Parse {
                path: matrix_name.to_string(),
                line: i + 1,
                msg: format!("unparseable cell `{tok}` in column {}", col + 1),
            })?;
            if col >= services.len() {
                return Err(Error::Dimension(format!(
                    "{matrix_name}:{}: more columns than the {} services in {service_name}",
                    i + 1,
                    services.len()
                )));
            }
            if value == opts.missing_sentinel {
                missing += 1;
            } else if !(value > 0.0) {
                nonpositive += 1;
            } else if value > opts.value_cap {
                over_cap += 1;
            } else {
                let (user_city, user_as) = user_regions[row];
                let (service_city, service_as) = service_regions[col];
                records.push(QosRecord {
                    user_id: row,
                    service_id: col,
                    value,
                    user_city,
                    user_as,
                    service_city,
                    service_as,
                });
            }
            col += 1;
        }
        if col != services.len() {
            return Err(Error::Dimension(format!(
                "{matrix_name}:{}: {col} columns, expected {}",
                i + 1,
                services.len()
            )));
        }
        row += 1;
    }
    if row != users.len() {
        return Err(Error::Dimension(format!(
            "{matrix_name} has {row} rows, expected {} users",
            users.len()
        )));
    }

    let dims = DatasetDims {
        n_users: users.len(),
        n_services: services.len(),
        n_user_cities: codebooks.user_city.size(),
        n_user_as: codebooks.user_as.size(),
        n_service_cities: codebooks.service_city.size(),
        n_service_as: codebooks.service_as.size(),
    };
    Ok(ParsedDataset {
        records,
        meta: DatasetMeta {
            dims,
            codebooks,
            user_regions,
            service_regions,
        },
        missing,
        dropped_over_cap: over_cap,
        dropped_nonpositive: nonpositive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const USERS: &str = "id\tcity\tas\n0\tParis\tAS1\n1\tBerlin\tAS2\n";
    const SERVICES: &str = "0\tTokyo\tAS9\n1\tAustin\tAS9\n";

    #[test]
    fn sentinel_cells_are_skipped() {
        let p = parse_matrix("0.3 -1\n1.2 5.0\n", USERS, SERVICES, ParseOptions::default()).unwrap();
        assert_eq!(p.records.len(), 3);
        assert_eq!(p.missing, 1);
        let r = p.records[0];
        assert_eq!((r.user_id, r.service_id, r.value), (0, 0, 0.3));
        // Sorted labels: Berlin=0, Paris=1; Austin=0, Tokyo=1.
        assert_eq!((r.user_city, r.user_as, r.service_city, r.service_as), (1, 0, 1, 0));
        assert_eq!(p.meta.dims.n_service_as, 1);
    }

    #[test]
    fn cap_drops_and_counts() {
        let p = parse_matrix("25.0 1\n2 3\n", USERS, SERVICES, ParseOptions::default()).unwrap();
        assert_eq!(p.dropped_over_cap, 1);
        assert_eq!(p.records.len(), 3);
        let p = parse_matrix("0 1\n2 3\n", USERS, SERVICES, ParseOptions::default()).unwrap();
        assert_eq!(p.dropped_nonpositive, 1);
    }

    #[test]
    fn errors() {
        let o = ParseOptions::default();
        assert!(matches!(parse_matrix("1 2\n", USERS, SERVICES, o), Err(Error::Dimension(_))));
        assert!(matches!(parse_matrix("1 2 3\n1 2\n", USERS, SERVICES, o), Err(Error::Dimension(_))));
        match parse_matrix("1 2\n1 x\n", USERS, SERVICES, o) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let gap = "0\ta\tb\n2\tc\td\n";
        assert!(matches!(parse_matrix("1 2\n1 2\n", gap, SERVICES, o), Err(Error::Dimension(_))));
        let dup = "0\ta\tb\n0\tc\td\n";
        assert!(matches!(parse_matrix("1 2\n1 2\n", dup, SERVICES, o), Err(Error::Parse { .. })));
    }

    #[test]
    fn codes_stable_under_metadata_reordering() {
        let shuffled = "1\tBerlin\tAS2\n0\tParis\tAS1\n";
        let a = parse_matrix("1 2\n3 4\n", USERS, SERVICES, ParseOptions::default()).unwrap();
        let b = parse_matrix("1 2\n3 4\n", shuffled, SERVICES, ParseOptions::default()).unwrap();
        assert_eq!(a.records, b.records);
    }
}
