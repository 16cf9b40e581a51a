use std::path::Path;

use serde::Serialize;

use super::train::LossHistory;
use crate::error::Result;
use crate::io::write_atomic;

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// `epoch,train_loss,val_loss` rows; the validation column is blank when
/// no validation set was used.
pub fn write_history_csv(path: &Path, history: &LossHistory) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for (i, l) in history.train.iter().enumerate() {
        let val = history.val.get(i).map(|v| v.to_string()).unwrap_or_default();
        w.write_record([(i + 1).to_string(), l.to_string(), val])?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}
