use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::raster::Image;

/// Root-mean-square difference per column, over rows and channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRms {
    pub per_column: Vec<f64>,
    pub global: f64,
}

pub fn column_rms_report(original: &Image, recovered: &Image) -> Result<ColumnRms> {
    original.check_same_dims(recovered)?;
    let (w, h, ch) = (original.width(), original.height(), original.channels());
    let mut sums = vec![0.0; w];
    for (i, (a, b)) in original.samples().iter().zip(recovered.samples()).enumerate() {
        let col = (i / ch) % w;
        sums[col] += (b - a).powi(2);
    }
    let per_col_n = (h * ch) as f64;
    let total: f64 = sums.iter().sum();
    Ok(ColumnRms {
        per_column: sums.iter().map(|s| (s / per_col_n).sqrt()).collect(),
        global: (total / (per_col_n * w as f64)).sqrt(),
    })
}
