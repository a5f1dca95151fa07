//! Version parsing, per-library release classification, and assignment
//! of each mined record to the release that introduced it.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::miner::DabcRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionId {
    pub raw: String,
    pub x: u32,
    pub y: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<u32>,
}

impl VersionId {
    fn key(&self) -> (u32, u32, i64) {
        (self.x, self.y, self.z.map(i64::from).unwrap_or(-1))
    }

    pub fn prefix(&self) -> (u32, u32) {
        (self.x, self.y)
    }
}

impl PartialOrd for VersionId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for VersionId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("malformed version string: {raw}")]
pub struct VersionParseError {
    pub raw: String,
}

/// Accepts `X.Y` or `X.Y.Z`, with an optional leading `v`.
pub fn parse_version(raw: &str) -> Result<VersionId, VersionParseError> {
    let err = || VersionParseError {
        raw: raw.to_string(),
    };
    let trimmed = raw.strip_prefix('v').unwrap_or(raw);
    let parts: Vec<&str> = trimmed.split('.').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(err());
    }
    let mut nums = Vec::with_capacity(3);
    for part in &parts {
        if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        nums.push(part.parse::<u32>().map_err(|_| err())?);
    }
    Ok(VersionId {
        raw: raw.to_string(),
        x: nums[0],
        y: nums[1],
        z: nums.get(2).copied(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VersionScheme {
    /// X.Y releases are major, X.Y.Z releases are minor (Scikit-Learn
    /// pre-1.0 convention).
    SuffixMinor,
    /// major.minor.patch (Pandas).
    SemverLoose,
    /// major.minor.bugfix (NumPy).
    NumpyStyle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleasePolicy {
    pub library: String,
    pub scheme: VersionScheme,
}

impl ReleasePolicy {
    pub fn sklearn() -> Self {
        ReleasePolicy {
            library: "sklearn".into(),
            scheme: VersionScheme::SuffixMinor,
        }
    }

    pub fn pandas() -> Self {
        ReleasePolicy {
            library: "pandas".into(),
            scheme: VersionScheme::SemverLoose,
        }
    }

    pub fn numpy() -> Self {
        ReleasePolicy {
            library: "numpy".into(),
            scheme: VersionScheme::NumpyStyle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleaseKind {
    Major,
    Minor,
    Patch,
}

impl fmt::Display for ReleaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReleaseKind::Major => "major",
            ReleaseKind::Minor => "minor",
            ReleaseKind::Patch => "patch",
        })
    }
}

/// Total classification of a version under a policy's scheme.
pub fn classify_release(v: &VersionId, policy: &ReleasePolicy) -> ReleaseKind {
    match policy.scheme {
        VersionScheme::SuffixMinor => {
            if v.z.is_none() {
                ReleaseKind::Major
            } else {
                ReleaseKind::Minor
            }
        }
        VersionScheme::SemverLoose | VersionScheme::NumpyStyle => {
            let z_zeroish = matches!(v.z, None | Some(0));
            if v.y == 0 && z_zeroish {
                ReleaseKind::Major
            } else if z_zeroish {
                ReleaseKind::Minor
            } else {
                ReleaseKind::Patch
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseTag {
    pub version: VersionId,
    /// ISO-8601 calendar date.
    pub date: String,
    pub kind: ReleaseKind,
}

#[derive(Debug, thiserror::Error)]
pub enum TagManifestError {
    #[error("tag manifest line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Version(#[from] VersionParseError),
}

/// Parses a tag manifest: CSV with header `version,date`, ISO-8601
/// dates. Kinds are derived from the policy; output sorted ascending.
pub fn load_tags(csv: &str, policy: &ReleasePolicy) -> Result<Vec<ReleaseTag>, TagManifestError> {
    let mut tags = Vec::new();
    for (idx, line) in csv.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if idx == 0 {
            if line != "version,date" {
                return Err(TagManifestError::Malformed {
                    line: 1,
                    reason: format!("expected header 'version,date', found '{line}'"),
                });
            }
            continue;
        }
        let Some((raw_version, date)) = line.split_once(',') else {
            return Err(TagManifestError::Malformed {
                line: idx + 1,
                reason: "expected two comma-separated fields".into(),
            });
        };
        let version = parse_version(raw_version.trim())?;
        let date = date.trim();
        let date_ok = date.len() == 10
            && date.bytes().enumerate().all(|(i, b)| match i {
                4 | 7 => b == b'-',
                _ => b.is_ascii_digit(),
            });
        if !date_ok {
            return Err(TagManifestError::Malformed {
                line: idx + 1,
                reason: format!("date '{date}' is not ISO-8601 (YYYY-MM-DD)"),
            });
        }
        let kind = classify_release(&version, policy);
        tags.push(ReleaseTag {
            version,
            date: date.to_string(),
            kind,
        });
    }
    tags.sort_by(|a, b| a.version.cmp(&b.version));
    Ok(tags)
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AssignError {
    #[error("record {record_id} version {version} is malformed: {source}")]
    BadVersion {
        record_id: String,
        version: String,
        source: VersionParseError,
    },
    #[error("record {record_id} version {version} matches no release tag")]
    Unassigned { record_id: String, version: String },
}

/// Finds the release tag a record's version belongs to: among tags
/// sharing the record's (X, Y) prefix, the smallest tag whose full
/// version is >= the record's version. A two-part record version under
/// suffix_minor must match a two-part tag exactly.
pub fn assign_dabc_release(
    record: &DabcRecord,
    tags: &[ReleaseTag],
    policy: &ReleasePolicy,
) -> Result<ReleaseTag, AssignError> {
    let record_id = record.id();
    let raw = record.version.as_str();
    let version = parse_version(raw).map_err(|source| AssignError::BadVersion {
        record_id: record_id.clone(),
        version: raw.to_string(),
        source,
    })?;
    let exact_only = policy.scheme == VersionScheme::SuffixMinor && version.z.is_none();
    tags.iter()
        .filter(|tag| tag.version.prefix() == version.prefix())
        .filter(|tag| {
            if exact_only {
                tag.version.z.is_none()
            } else {
                tag.version >= version
            }
        })
        .min_by(|a, b| a.version.cmp(&b.version))
        .cloned()
        .ok_or(AssignError::Unassigned {
            record_id,
            version: raw.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_two_part() {
        let v = parse_version("0.22").unwrap();
        assert_eq!((v.x, v.y, v.z), (0, 22, None));
        assert_eq!(v.raw, "0.22");
    }

    #[test]
    fn parse_three_part() {
        let v = parse_version("1.16.3").unwrap();
        assert_eq!((v.x, v.y, v.z), (1, 16, Some(3)));
    }

    #[test]
    fn parse_leading_v() {
        let v = parse_version("v2.0.0").unwrap();
        assert_eq!((v.x, v.y, v.z), (2, 0, Some(0)));
    }

    #[test]
    fn parse_rejects_garbage() {
        for bad in ["", "1", "1.2.3.4", "1.x", "1..2", "a.b", "1.2-rc1"] {
            assert!(parse_version(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn suffix_minor_classification() {
        let policy = ReleasePolicy::sklearn();
        assert_eq!(
            classify_release(&parse_version("0.22").unwrap(), &policy),
            ReleaseKind::Major
        );
        assert_eq!(
            classify_release(&parse_version("0.19.1").unwrap(), &policy),
            ReleaseKind::Minor
        );
        assert_eq!(
            classify_release(&parse_version("0.22.0").unwrap(), &policy),
            ReleaseKind::Minor
        );
    }

    #[test]
    fn numpy_style_classification() {
        let policy = ReleasePolicy::numpy();
        assert_eq!(
            classify_release(&parse_version("1.16.3").unwrap(), &policy),
            ReleaseKind::Patch
        );
        assert_eq!(
            classify_release(&parse_version("1.13.0").unwrap(), &policy),
            ReleaseKind::Minor
        );
        assert_eq!(
            classify_release(&parse_version("2.0.0").unwrap(), &policy),
            ReleaseKind::Major
        );
    }

    #[test]
    fn semver_loose_classification() {
        let policy = ReleasePolicy::pandas();
        assert_eq!(
            classify_release(&parse_version("1.0.0").unwrap(), &policy),
            ReleaseKind::Major
        );
        assert_eq!(
            classify_release(&parse_version("1.4.0").unwrap(), &policy),
            ReleaseKind::Minor
        );
        // Pre-1.0 releases with a minor component classify as minor.
        assert_eq!(
            classify_release(&parse_version("0.25.0").unwrap(), &policy),
            ReleaseKind::Minor
        );
        assert_eq!(
            classify_release(&parse_version("1.5.3").unwrap(), &policy),
            ReleaseKind::Patch
        );
    }

    #[test]
    fn version_ordering_total() {
        let mut versions: Vec<VersionId> = ["0.22", "0.19.1", "0.22.1", "1.0.0", "0.19"]
            .iter()
            .map(|s| parse_version(s).unwrap())
            .collect();
        versions.sort();
        let raws: Vec<&str> = versions.iter().map(|v| v.raw.as_str()).collect();
        assert_eq!(raws, vec!["0.19", "0.19.1", "0.22", "0.22.1", "1.0.0"]);
    }

    const SKLEARN_TAGS: &str = "version,date\n0.19,2017-08-12\n0.19.1,2017-10-23\n0.21,2019-05-09\n0.22,2019-12-02\n0.22.1,2020-01-02\n";

    #[test]
    fn load_tags_classifies_and_sorts() {
        let tags = load_tags(SKLEARN_TAGS, &ReleasePolicy::sklearn()).unwrap();
        assert_eq!(tags.len(), 5);
        assert!(tags.windows(2).all(|w| w[0].version <= w[1].version));
        let v022 = tags.iter().find(|t| t.version.raw == "0.22").unwrap();
        assert_eq!(v022.kind, ReleaseKind::Major);
        assert_eq!(v022.date, "2019-12-02");
        let v0191 = tags.iter().find(|t| t.version.raw == "0.19.1").unwrap();
        assert_eq!(v0191.kind, ReleaseKind::Minor);
    }

    #[test]
    fn load_tags_rejects_bad_header_and_date() {
        let policy = ReleasePolicy::sklearn();
        assert!(load_tags("ver,when\n0.22,2019-12-02\n", &policy).is_err());
        assert!(load_tags("version,date\n0.22,Dec 2 2019\n", &policy).is_err());
        assert!(load_tags("version,date\n0.22\n", &policy).is_err());
    }

    fn record_with_version(version: &str) -> DabcRecord {
        DabcRecord {
            dabc_msg: "The default value of gamma changed from 'auto' to 'scale'".into(),
            version: version.to_string(),
            path: "sklearn/svm/_classes.py".into(),
            class_name: Some("SVC".into()),
            function_name: "__init__".into(),
            argument: Some("gamma".into()),
            dabc_url: String::new(),
            change_kind: crate::miner::ChangeKind::DefaultValueChange,
            old_default: Some("'auto'".into()),
            new_default: Some("'scale'".into()),
            reason: None,
            effect: None,
        }
    }

    #[test]
    fn assign_gamma_record() {
        let policy = ReleasePolicy::sklearn();
        let tags = load_tags(SKLEARN_TAGS, &policy).unwrap();
        let tag = assign_dabc_release(&record_with_version("0.22"), &tags, &policy).unwrap();
        assert_eq!(tag.version.raw, "0.22");
        assert_eq!(tag.kind, ReleaseKind::Major);
        assert_eq!(tag.date, "2019-12-02");
    }

    #[test]
    fn assign_two_part_requires_exact_tag() {
        let policy = ReleasePolicy::sklearn();
        // Only the .1 patch tag exists for the 0.22 series.
        let tags = load_tags("version,date\n0.22.1,2020-01-02\n", &policy).unwrap();
        let err = assign_dabc_release(&record_with_version("0.22"), &tags, &policy).unwrap_err();
        assert!(matches!(err, AssignError::Unassigned { .. }));
    }

    #[test]
    fn assign_three_part_picks_smallest_at_or_above() {
        let policy = ReleasePolicy::pandas();
        let tags =
            load_tags("version,date\n1.4.0,2022-01-22\n1.4.1,2022-02-12\n", &policy).unwrap();
        let tag = assign_dabc_release(&record_with_version("1.4.0"), &tags, &policy).unwrap();
        assert_eq!(tag.version.raw, "1.4.0");
        assert_eq!(tag.kind, ReleaseKind::Minor);
    }

    #[test]
    fn assign_missing_version_errors() {
        let policy = ReleasePolicy::sklearn();
        let tags = load_tags(SKLEARN_TAGS, &policy).unwrap();
        let record = record_with_version("not-a-version");
        assert!(matches!(
            assign_dabc_release(&record, &tags, &policy),
            Err(AssignError::BadVersion { .. })
        ));
        let unmatched = record_with_version("9.9");
        assert!(matches!(
            assign_dabc_release(&unmatched, &tags, &policy),
            Err(AssignError::Unassigned { .. })
        ));
    }

    proptest! {
        #[test]
        fn parse_roundtrips(x in 0u32..100, y in 0u32..100, z in proptest::option::of(0u32..100)) {
            let raw = match z {
                Some(z) => format!("{x}.{y}.{z}"),
                None => format!("{x}.{y}"),
            };
            let v = parse_version(&raw).unwrap();
            prop_assert_eq!((v.x, v.y, v.z), (x, y, z));
            let again = parse_version(&v.raw).unwrap();
            prop_assert_eq!(v, again);
        }

        #[test]
        fn classification_is_total(x in 0u32..50, y in 0u32..50, z in proptest::option::of(0u32..50)) {
            let raw = match z {
                Some(z) => format!("{x}.{y}.{z}"),
                None => format!("{x}.{y}"),
            };
            let v = parse_version(&raw).unwrap();
            for policy in [ReleasePolicy::sklearn(), ReleasePolicy::pandas(), ReleasePolicy::numpy()] {
                let first = classify_release(&v, &policy);
                prop_assert_eq!(first, classify_release(&v, &policy));
                if policy.scheme == VersionScheme::SuffixMinor && v.z.is_some() {
                    prop_assert_ne!(first, ReleaseKind::Major);
                }
            }
        }
    }
}
