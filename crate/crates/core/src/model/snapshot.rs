use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter};

use super::{Backend, Constraint, Model, TopicSnapshot, TopicView};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// On-disk model snapshot. Reals are written in base 10 with 17 significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub backend: Backend,
    #[serde(rename = "K")]
    pub k: usize,
    pub vocabulary: Vec<String>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub constraints: Vec<Constraint>,
    pub word_probs: Vec<Vec<f64>>,
    pub doc_probs: Vec<Vec<f64>>,
}

impl SnapshotFile {
    pub fn capture(model: &Model, vocabulary: &Vocabulary) -> Self {
        let snap = model.snapshot();
        let priors = model.state.priors();
        SnapshotFile {
            backend: model.backend,
            k: snap.topic_count,
            vocabulary: vocabulary.words().to_vec(),
            alpha: priors.alpha.to_rows(),
            beta: priors.beta.to_rows(),
            constraints: model.constraints().map(|c| c.iter().cloned().collect()).unwrap_or_default(),
            word_probs: snap.word_probs.to_rows(),
            doc_probs: snap.doc_probs.to_rows(),
        }
    }

    pub fn to_snapshot(&self) -> TopicSnapshot {
        TopicSnapshot::from_probs(
            DenseMatrix::from_rows(self.word_probs.clone()),
            DenseMatrix::from_rows(self.doc_probs.clone()),
        )
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<()> {
        let mut ser = serde_json::Serializer::with_formatter(writer, SignificantDigits);
        self.serialize(&mut ser)?;
        Ok(())
    }

    pub fn to_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)?;
        Ok(String::from_utf8(buf).expect("json is utf-8"))
    }
}

/// JSON formatter that prints every float as `d.dddddddddddddddde±x`.
struct SignificantDigits;

impl Formatter for SignificantDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            CompactFormatter.write_f64(writer, value)
        }
    }
}

pub fn write_snapshot_file(path: impl AsRef<Path>, file: &SnapshotFile) -> Result<()> {
    let path = path.as_ref();
    let out = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(out);
    file.to_writer(&mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_snapshot_file(path: impl AsRef<Path>) -> Result<SnapshotFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
