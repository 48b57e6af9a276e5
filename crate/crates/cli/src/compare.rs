//! Fieldwise differences between two output files of the same schema.

use std::collections::BTreeMap;
use std::path::Path;

use polarpath::kernel::KernelGrid;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FieldDiff {
    pub field: String,
    pub count: usize,
    pub max_abs: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffReport {
    pub file_a: String,
    pub file_b: String,
    pub format: &'static str,
    pub config_hash_a: Option<String>,
    pub config_hash_b: Option<String>,
    pub fields: Vec<FieldDiff>,
    pub max_abs: f64,
    pub tolerance: f64,
    pub within_tolerance: bool,
}

/// Values of one file grouped by field name, plus the config hash it carries.
struct Parsed {
    hash: Option<String>,
    fields: BTreeMap<String, Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Num(f64),
    Text(String),
}

fn cell_diff(a: &Cell, b: &Cell) -> f64 {
    match (a, b) {
        (Cell::Num(x), Cell::Num(y)) if x.is_nan() && y.is_nan() => 0.0,
        (Cell::Num(x), Cell::Num(y)) if x == y => 0.0,
        (Cell::Num(x), Cell::Num(y)) => {
            let d = (x - y).abs();
            if d.is_nan() {
                f64::INFINITY
            } else {
                d
            }
        }
        (a, b) if a == b => 0.0,
        _ => f64::INFINITY,
    }
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Config(format!("schema mismatch: {}", msg.into()))
}

fn parse_csv(path: &Path) -> Result<Parsed, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut hash = None;
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix('#') {
            Some(meta) => {
                if let Some(h) = meta.trim().strip_prefix("config_hash=") {
                    hash = Some(h.to_string());
                }
            }
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| schema(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let mut fields: BTreeMap<String, Vec<Cell>> = headers.iter().map(|h| (h.clone(), Vec::new())).collect();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| schema(format!("{}: {e}", path.display())))?;
        for (h, v) in headers.iter().zip(rec.iter()) {
            let cell = v.parse::<f64>().map(Cell::Num).unwrap_or_else(|_| Cell::Text(v.to_string()));
            fields.get_mut(h).expect("header column").push(cell);
        }
    }
    Ok(Parsed { hash, fields })
}

fn flatten(v: &Value, path: &str, out: &mut BTreeMap<String, Vec<Cell>>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                flatten(x, &p, out);
            }
        }
        Value::Array(a) => {
            for x in a {
                flatten(x, &format!("{path}[]"), out);
            }
        }
        Value::Number(n) => out.entry(path.to_string()).or_default().push(Cell::Num(n.as_f64().unwrap_or(f64::NAN))),
        other => out.entry(path.to_string()).or_default().push(Cell::Text(other.to_string())),
    }
}

fn parse_json(path: &Path) -> Result<Parsed, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| schema(format!("{}: {e}", path.display())))?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| schema(format!("{}: top level is not an object", path.display())))?;
    let hash = obj.remove("config_hash").and_then(|h| h.as_str().map(String::from));
    // the resolved config is compared through the hash, not fieldwise
    obj.remove("config");
    let mut fields = BTreeMap::new();
    flatten(&v, "", &mut fields);
    Ok(Parsed { hash, fields })
}

fn parse_bin(path: &Path) -> Result<Parsed, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let kg = KernelGrid::read_binary(std::io::BufReader::new(f)).map_err(|e| schema(format!("{}: {e}", path.display())))?;
    let mut fields = BTreeMap::new();
    let g = &kg.grid;
    let header = [
        ("chart", kg.grid.chart.kind.code() as f64),
        ("N", kg.n_slices as f64),
        ("eps", kg.eps),
        ("time", kg.time),
        ("n1", g.a1.n as f64),
        ("n2", g.a2.n as f64),
        ("sources", kg.sources.len() as f64),
    ];
    for (k, v) in header {
        fields.insert(k.to_string(), vec![Cell::Num(v)]);
    }
    fields.insert("value".to_string(), kg.values.iter().map(|&v| Cell::Num(v)).collect());
    Ok(Parsed { hash: None, fields })
}

/// Compares two files; errors are schema or hash problems, tolerance is judged by the caller.
pub fn compare(a: &Path, b: &Path, tolerance: f64, force: bool) -> Result<DiffReport, CliError> {
    let ext = |p: &Path| p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let (ea, eb) = (ext(a), ext(b));
    if ea != eb {
        return Err(schema(format!("file types differ (.{ea} vs .{eb})")));
    }
    let (format, pa, pb) = match ea.as_str() {
        "csv" => ("csv", parse_csv(a)?, parse_csv(b)?),
        "json" => ("json", parse_json(a)?, parse_json(b)?),
        "bin" => ("bin", parse_bin(a)?, parse_bin(b)?),
        other => return Err(schema(format!("unsupported file type `.{other}`"))),
    };
    if let (Some(ha), Some(hb)) = (&pa.hash, &pb.hash) {
        if ha != hb && !force {
            return Err(CliError::Config(format!(
                "config hashes differ ({ha} vs {hb}); pass --force to compare anyway"
            )));
        }
    }
    if pa.fields.keys().ne(pb.fields.keys()) {
        let ka: Vec<_> = pa.fields.keys().collect();
        let kb: Vec<_> = pb.fields.keys().collect();
        return Err(schema(format!("fields differ: {ka:?} vs {kb:?}")));
    }
    let mut fields = Vec::new();
    let mut max_abs = 0.0f64;
    for (name, va) in &pa.fields {
        let vb = &pb.fields[name];
        if va.len() != vb.len() {
            return Err(schema(format!("field `{name}` has {} vs {} entries", va.len(), vb.len())));
        }
        let mut d = FieldDiff {
            field: name.clone(),
            count: va.len(),
            ..Default::default()
        };
        let mut sq = 0.0;
        for (x, y) in va.iter().zip(vb) {
            let e = cell_diff(x, y);
            d.max_abs = d.max_abs.max(e);
            sq += e * e;
        }
        d.l2 = sq.sqrt();
        max_abs = max_abs.max(d.max_abs);
        fields.push(d);
    }
    Ok(DiffReport {
        file_a: a.display().to_string(),
        file_b: b.display().to_string(),
        format,
        config_hash_a: pa.hash,
        config_hash_b: pb.hash,
        fields,
        max_abs,
        tolerance,
        within_tolerance: max_abs <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn csv_fieldwise_differences() {
        let d = tempfile::tempdir().unwrap();
        let a = file(d.path(), "a.csv", "# config_hash=x\nr,value\n1,2\n2,3\n");
        let b = file(d.path(), "b.csv", "# config_hash=x\nr,value\n1,2.5\n2,3\n");
        let rep = compare(&a, &b, 0.1, false).unwrap();
        let v = rep.fields.iter().find(|f| f.field == "value").unwrap();
        assert_eq!(v.max_abs, 0.5);
        assert!(!rep.within_tolerance);
        assert_eq!(compare(&a, &a, 0.0, false).unwrap().max_abs, 0.0);
    }

    #[test]
    fn hash_and_schema_checks() {
        let d = tempfile::tempdir().unwrap();
        let a = file(d.path(), "a.csv", "# config_hash=x\nr,value\n1,2\n");
        let b = file(d.path(), "b.csv", "# config_hash=y\nr,value\n1,2\n");
        let c = file(d.path(), "c.csv", "# config_hash=x\nr,other\n1,2\n");
        assert!(matches!(compare(&a, &b, 0.0, false), Err(CliError::Config(_))));
        assert!(compare(&a, &b, 0.0, true).unwrap().within_tolerance);
        assert!(matches!(compare(&a, &c, 0.0, false), Err(CliError::Config(_))));
    }

    #[test]
    fn json_ignores_config_and_compares_leaves() {
        let d = tempfile::tempdir().unwrap();
        let a = file(d.path(), "a.json", r#"{"config_hash":"h","config":{"tau":1},"results":{"x":[1.0,2.0],"s":"ok"}}"#);
        let b = file(d.path(), "b.json", r#"{"config_hash":"h","config":{"tau":2},"results":{"x":[1.0,2.25],"s":"ok"}}"#);
        let rep = compare(&a, &b, 1.0, false).unwrap();
        assert_eq!(rep.max_abs, 0.25);
        assert_eq!(rep.fields.len(), 2);
    }
}
