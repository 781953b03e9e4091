//! Text file formats: tracklet datasets and model state. Floats are written
//! in shortest round-trip form so save/load is bitwise exact.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{NhacError, Result};
use crate::model::EmbeddingModel;
use crate::synth::{Dataset, Frame, FrameKind, Tracklet};

const DATASET_MAGIC: &str = "#nhac-dataset";
const DATASET_FIELDS: &str = "tracklet,identity,camera,kind,feature";
const MODEL_MAGIC: &str = "#nhac-model";
const ABSENT: &str = "-";

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| NhacError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| NhacError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| NhacError::io(path, e))?;
    tmp.persist(path).map_err(|e| NhacError::io(path, e.error))?;
    Ok(())
}

fn opt_field<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| ABSENT.to_string(), T::to_string)
}

pub fn dataset_to_string(dataset: &Dataset) -> String {
    let mut out = format!("{DATASET_MAGIC} v1 dim={} fields={DATASET_FIELDS}\n", dataset.dim);
    for t in &dataset.tracklets {
        let identity = opt_field(&t.identity);
        let camera = opt_field(&t.camera);
        for f in &t.frames {
            let _ = write!(out, "{}\t{}\t{}\t{}", t.id, identity, camera, opt_field(&f.kind));
            for x in &f.feature {
                let _ = write!(out, "\t{x}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, dataset_to_string(dataset).as_bytes())
}

fn parse_header(line: &str, path: &Path) -> Result<usize> {
    let err = |message: String| NhacError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    let mut parts = line.split_whitespace();
    if parts.next() != Some(DATASET_MAGIC) {
        return Err(err(format!("expected header starting with {DATASET_MAGIC}")));
    }
    if parts.next() != Some("v1") {
        return Err(err("unsupported dataset version".into()));
    }
    let mut dim = None;
    let mut fields = None;
    for kv in parts {
        match kv.split_once('=') {
            Some(("dim", v)) => dim = Some(v.parse::<usize>().map_err(|e| err(format!("bad dim: {e}")))?),
            Some(("fields", v)) => fields = Some(v.to_string()),
            _ => return Err(err(format!("unexpected header entry {kv:?}"))),
        }
    }
    if fields.as_deref() != Some(DATASET_FIELDS) {
        return Err(err(format!("fields must be {DATASET_FIELDS}")));
    }
    match dim {
        Some(d) if d > 0 => Ok(d),
        _ => Err(err("missing or zero dim".into())),
    }
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> std::result::Result<Option<T>, String>
where
    T::Err: std::fmt::Display,
{
    if s == ABSENT {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|e| format!("{s:?}: {e}"))
    }
}

/// Parses a dataset file. Frames of one tracklet must be on consecutive
/// lines.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| NhacError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty file".into(),
    })?;
    let dim = parse_header(header, path)?;
    let mut tracklets: Vec<Tracklet> = Vec::new();
    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| NhacError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 5 {
            return Err(err(format!("expected at least 5 tab-separated columns, got {}", cols.len())));
        }
        let id = cols[0];
        if id.is_empty() {
            return Err(err("empty tracklet id".into()));
        }
        let identity: Option<u32> = parse_opt(cols[1]).map_err(|e| err(format!("identity {e}")))?;
        let camera: Option<u32> = parse_opt(cols[2]).map_err(|e| err(format!("camera {e}")))?;
        let kind: Option<FrameKind> = parse_opt(cols[3]).map_err(|e| err(format!("kind {e}")))?;
        let feature = cols[4..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| err(format!("feature value {v:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if feature.len() != dim {
            return Err(NhacError::Tracklet {
                tracklet: id.to_string(),
                message: format!(
                    "frame on line {line_no} has dimension {}, header declares {dim}",
                    feature.len()
                ),
            });
        }
        let frame = Frame { feature, kind };
        match tracklets.last_mut() {
            Some(t) if t.id == id => {
                if t.identity != identity || t.camera != camera {
                    return Err(NhacError::Tracklet {
                        tracklet: id.to_string(),
                        message: format!("line {line_no} changes identity or camera"),
                    });
                }
                t.frames.push(frame);
            }
            _ => {
                if tracklets.iter().any(|t| t.id == id) {
                    return Err(err(format!("frames of tracklet {id} are not contiguous")));
                }
                tracklets.push(Tracklet {
                    id: id.to_string(),
                    identity,
                    camera,
                    frames: vec![frame],
                });
            }
        }
    }
    let dataset = Dataset { dim, tracklets };
    dataset.validate()?;
    let with_identity = dataset.tracklets.iter().filter(|t| t.identity.is_some()).count();
    if with_identity != 0 && with_identity != dataset.len() {
        return Err(NhacError::input(
            "identity annotations must be present for all tracklets or for none",
        ));
    }
    Ok(dataset)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| NhacError::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn model_to_string(model: &EmbeddingModel) -> String {
    let mut out = format!(
        "{MODEL_MAGIC} v1 input_dim={} hidden_dim={} embed_dim={} dropout={}\n",
        model.input_dim(),
        model.hidden_dim(),
        model.embed_dim(),
        model.dropout()
    );
    let p = model.params();
    for (name, range) in [
        ("w1", model.w1_range()),
        ("b1", model.b1_range()),
        ("w2", model.w2_range()),
        ("b2", model.b2_range()),
    ] {
        out.push_str(name);
        for x in &p[range] {
            let _ = write!(out, " {x}");
        }
        out.push('\n');
    }
    out
}

pub fn save_model(model: &EmbeddingModel, path: &Path) -> Result<()> {
    write_atomic(path, model_to_string(model).as_bytes())
}

pub fn parse_model(text: &str, path: &Path) -> Result<EmbeddingModel> {
    let err = |line: usize, message: String| NhacError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MODEL_MAGIC) || parts.next() != Some("v1") {
        return Err(err(1, format!("expected {MODEL_MAGIC} v1 header")));
    }
    let (mut input, mut hidden, mut embed, mut dropout) = (None, None, None, None);
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| err(1, format!("bad header entry {kv:?}")))?;
        let bad = |e: &dyn std::fmt::Display| err(1, format!("{k}: {e}"));
        match k {
            "input_dim" => input = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
            "hidden_dim" => hidden = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
            "embed_dim" => embed = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
            "dropout" => dropout = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
            _ => return Err(err(1, format!("unknown header key {k}"))),
        }
    }
    let (Some(input), Some(hidden), Some(embed), Some(dropout)) = (input, hidden, embed, dropout) else {
        return Err(err(1, "incomplete model header".into()));
    };
    let mut params = Vec::new();
    for (i, expected) in ["w1", "b1", "w2", "b2"].into_iter().enumerate() {
        let line_no = i + 2;
        let line = lines.next().ok_or_else(|| err(line_no, format!("missing {expected} array")))?;
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some(expected) {
            return Err(err(line_no, format!("expected {expected} array")));
        }
        for t in tokens {
            params.push(t.parse::<f64>().map_err(|e| err(line_no, format!("{t:?}: {e}")))?);
        }
    }
    EmbeddingModel::from_params(input, hidden, embed, dropout, params)
}

pub fn load_model(path: &Path) -> Result<EmbeddingModel> {
    let text = fs::read_to_string(path).map_err(|e| NhacError::io(path, e))?;
    parse_model(&text, path)
}
