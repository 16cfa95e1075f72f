//! Text formats for GMMs and transforms. Matrices are written as their
//! dimensions followed by row-major values with 17 significant digits, which
//! round-trips `f64` exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::fmllr::FmllrTransform;
use super::gmm::DiagonalGmm;
use super::stc::StcTransform;
use crate::linalg::{write_matrix, write_vector, TextReader};
use crate::Result;

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied())
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

impl DiagonalGmm {
    pub fn to_text(&self) -> String {
        let mut s = String::from("diag-gmm\n");
        s.push_str("weights\n");
        write_vector(&mut s, &self.weights);
        s.push_str("means\n");
        write_matrix(&mut s, &rows_to_matrix(&self.means));
        s.push_str("variances\n");
        write_matrix(&mut s, &rows_to_matrix(&self.variances));
        s
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut r = TextReader::new(text, source);
        r.keyed("diag-gmm")?;
        r.keyed("weights")?;
        let weights = r.vector()?;
        r.keyed("means")?;
        let means = matrix_to_rows(&r.matrix()?);
        r.keyed("variances")?;
        let variances = matrix_to_rows(&r.matrix()?);
        DiagonalGmm::new(weights, means, variances)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, &path.display().to_string())
    }
}

impl StcTransform {
    pub fn to_text(&self) -> String {
        let mut s = format!("stc\nmodel-tag {:016x}\nmatrix\n", self.model_tag);
        write_matrix(&mut s, &self.matrix);
        s.push_str("weights\n");
        write_vector(&mut s, &self.weights);
        s.push_str("means\n");
        write_matrix(&mut s, &rows_to_matrix(&self.means));
        s.push_str("variances\n");
        write_matrix(&mut s, &rows_to_matrix(&self.variances));
        s.push_str("objective\n");
        write_vector(&mut s, &self.objective);
        s
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut r = TextReader::new(text, source);
        r.keyed("stc")?;
        let tag = r.keyed("model-tag")?;
        let model_tag =
            tag.first().and_then(|t| u64::from_str_radix(t, 16).ok()).ok_or_else(|| r.error("bad model tag"))?;
        r.keyed("matrix")?;
        let matrix = r.matrix()?;
        r.keyed("weights")?;
        let weights = r.vector()?;
        r.keyed("means")?;
        let means = matrix_to_rows(&r.matrix()?);
        r.keyed("variances")?;
        let variances = matrix_to_rows(&r.matrix()?);
        r.keyed("objective")?;
        let objective = r.vector()?;
        if matrix.nrows() != matrix.ncols() || means.iter().any(|m| m.len() != matrix.nrows()) {
            return Err(r.error("inconsistent STC dimensions"));
        }
        Ok(StcTransform { matrix, weights, means, variances, model_tag, objective })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, &path.display().to_string())
    }
}

impl FmllrTransform {
    pub fn to_text(&self) -> String {
        let mut s = format!("fmllr\nspeaker {}\nA\n", self.speaker_id);
        write_matrix(&mut s, &self.a);
        s.push_str("b\n");
        write_vector(&mut s, self.b.as_slice());
        s.push_str("log-likelihood\n");
        write_vector(&mut s, &self.log_likelihood);
        s
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut r = TextReader::new(text, source);
        r.keyed("fmllr")?;
        let speaker_id = r.keyed("speaker")?.join(" ");
        r.keyed("A")?;
        let a = r.matrix()?;
        r.keyed("b")?;
        let b = DVector::from_vec(r.vector()?);
        r.keyed("log-likelihood")?;
        let log_likelihood = r.vector()?;
        if a.nrows() != a.ncols() || a.nrows() != b.len() {
            return Err(r.error("inconsistent fMLLR dimensions"));
        }
        Ok(FmllrTransform { speaker_id, a, b, auxiliary: Vec::new(), log_likelihood })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, &path.display().to_string())
    }
}
