use std::path::Path;

use crate::error::{Error, Result};

/// Expands `--config FILE` into flags.
///
/// Each `key = value` of the TOML file becomes `--key value`, inserted right
/// after the subcommand so that flags given on the command line win.
pub fn inject_config(args: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let (path, consumed) = match args[pos].strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => match args.get(pos + 1) {
            Some(p) => (p.clone(), 2),
            None => return Err(Error::config("--config needs a file path")),
        },
    };
    let mut rest = args;
    rest.drain(pos..pos + consumed);
    let injected = flags_from_toml(Path::new(&path))?;

    // program, subcommand, and the nested bench subcommand if present
    let mut at = 2.min(rest.len());
    if rest.get(1).map(String::as_str) == Some("bench") && rest.len() > 2 {
        at = 3;
    }
    rest.splice(at..at, injected);
    Ok(rest)
}

fn flags_from_toml(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::config(format!("config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            toml::Value::Boolean(true) => out.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts = items.iter().map(scalar_text).collect::<Result<Vec<_>>>()?;
                out.push(format!("{flag}={}", parts.join(",")));
            }
            other => out.push(format!("{flag}={}", scalar_text(&other)?)),
        }
    }
    Ok(out)
}

fn scalar_text(v: &toml::Value) -> Result<String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(format!("{f:?}")),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(Error::config("config values must be scalars or arrays of scalars")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn flags_follow_subcommand() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "lambda = 0.5\nrbf = 12\nno_identity = true\ncolumns = [\"a\", \"b\"]").unwrap();
        let path = f.path().display().to_string();
        let out = inject_config(argv(&format!("rredmd learn --config {path} --lambda 0.2"))).unwrap();
        assert_eq!(out[1], "learn");
        let lam = out.iter().position(|a| a == "--lambda=0.5").unwrap();
        let user = out.iter().position(|a| a == "--lambda").unwrap();
        assert!(lam < user);
        assert!(out.contains(&"--no-identity".to_string()));
        assert!(out.contains(&"--columns=a,b".to_string()));
        assert!(out.contains(&"--rbf=12".to_string()));
    }

    #[test]
    fn bench_nesting() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "samples = 300").unwrap();
        let path = f.path().display().to_string();
        let out = inject_config(argv(&format!("rredmd bench compare --config={path}"))).unwrap();
        assert_eq!(&out[..4], &argv("rredmd bench compare --samples=300")[..]);
    }

    #[test]
    fn nested_tables_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x = {{ a = 1 }}").unwrap();
        let path = f.path().display().to_string();
        assert!(inject_config(argv(&format!("rredmd learn --config {path}"))).is_err());
    }
}
