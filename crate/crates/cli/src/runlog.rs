//! JSON-lines run log: one object per event, appended.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

pub struct RunLog {
    file: Option<File>,
    command: String,
}

impl RunLog {
    pub fn open(path: Option<&Path>, command: &str) -> std::io::Result<Self> {
        let file = match path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                Some(OpenOptions::new().create(true).append(true).open(p)?)
            }
            None => None,
        };
        Ok(RunLog { file, command: command.into() })
    }

    pub fn event(&mut self, event: &str, mut fields: Value) {
        let Some(f) = self.file.as_mut() else { return };
        let t = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        let mut line = json!({ "time": t, "command": self.command, "event": event });
        if let (Some(obj), Some(extra)) = (line.as_object_mut(), fields.as_object_mut()) {
            obj.append(extra);
        }
        // A failing log write must not abort the command.
        let _ = writeln!(f, "{line}");
    }

    pub fn artifact(&mut self, kind: &str, path: &Path) {
        self.event("artifact", json!({ "kind": kind, "path": path.display().to_string() }));
    }
}
