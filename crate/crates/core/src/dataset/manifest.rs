use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub storm_id: String,
    pub path: PathBuf,
    pub role: Role,
}

/// Parses `storm_id,path,role` lines. Relative paths resolve against the
/// manifest's directory. Role `auto` applies [`is_default_test_storm`].
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out: Vec<ManifestEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line == "storm_id,path,role" {
            continue;
        }
        let row = i + 1;
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                context: "manifest".into(),
                row,
                message: format!("expected storm_id,path,role, found {} fields", parts.len()),
            });
        }
        let storm_id = parts[0].to_string();
        let role = match parts[2] {
            "train" => Role::Train,
            "test" => Role::Test,
            "auto" if is_default_test_storm(&storm_id) => Role::Test,
            "auto" => Role::Train,
            other => {
                return Err(Error::Parse {
                    context: "manifest".into(),
                    row,
                    message: format!("unknown role `{other}`"),
                })
            }
        };
        if out.iter().any(|e| e.storm_id == storm_id) {
            return Err(Error::Validation(format!("manifest lists storm {storm_id} twice")));
        }
        let p = Path::new(parts[1]);
        let path = if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        out.push(ManifestEntry { storm_id, path, role });
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Last four digits of the last digit run of length >= 4, when plausible
/// as a year.
fn id_year(id: &str) -> Option<u32> {
    id.split(|c: char| !c.is_ascii_digit())
        .filter(|run| run.len() >= 4)
        .filter_map(|run| run[run.len() - 4..].parse().ok())
        .rfind(|y| (1850..=2100).contains(y))
}

/// Default held-out convention: storms from 2020–2021 plus Wilma (2005),
/// recognised from a four-digit year in the id (e.g. `AL122021`).
pub fn is_default_test_storm(id: &str) -> bool {
    let upper = id.to_ascii_uppercase();
    match id_year(id) {
        Some(2020) | Some(2021) => true,
        Some(2005) => upper.contains("WILMA") || upper.starts_with("AL25"),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_roles_and_paths() {
        let m = parse_manifest(
            "# storms\nstorm_id,path,role\nA,a.csv,train\nB,/abs/b.csv,test\nAL122021,c.csv,auto\nAL052010,d.csv,auto\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m[0].path, PathBuf::from("/data/a.csv"));
        assert_eq!(m[1].path, PathBuf::from("/abs/b.csv"));
        assert_eq!(m[1].role, Role::Test);
        assert_eq!(m[2].role, Role::Test);
        assert_eq!(m[3].role, Role::Train);
    }

    #[test]
    fn rejects_bad_role_and_duplicates() {
        assert!(parse_manifest("A,a.csv,validate\n", Path::new(".")).is_err());
        assert!(parse_manifest("A,a.csv,train\nA,b.csv,train\n", Path::new(".")).is_err());
    }

    #[test]
    fn default_test_convention() {
        assert!(is_default_test_storm("AL122021"));
        assert!(is_default_test_storm("2020_laura"));
        assert!(is_default_test_storm("AL252005"));
        assert!(is_default_test_storm("WILMA_2005"));
        assert!(!is_default_test_storm("KATRINA_2005"));
        assert!(!is_default_test_storm("AL092019"));
        assert!(!is_default_test_storm("storm7"));
    }
}
