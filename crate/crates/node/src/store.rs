//! On-disk layout: `processes/<name>.sbpm` in canonical form and
//! `runs/<instance>.trace.jsonl`. Only definitions survive a restart.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use subjektiv_core::engine::{to_jsonl, TraceRecord};
use subjektiv_core::model::ValidModel;
use subjektiv_core::patterns::load_model;
use subjektiv_core::pdl;
use uuid::Uuid;

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("processes"))?;
        fs::create_dir_all(root.join("runs"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn process_path(&self, name: &str) -> PathBuf {
        self.root.join("processes").join(format!("{name}.sbpm"))
    }

    pub fn trace_path(&self, instance: Uuid) -> PathBuf {
        self.root
            .join("runs")
            .join(format!("{instance}.trace.jsonl"))
    }

    pub fn save_process(&self, model: &ValidModel) -> io::Result<()> {
        let path = self.process_path(&model.name);
        let tmp = path.with_extension("sbpm.tmp");
        fs::write(&tmp, pdl::serialize(model))?;
        fs::rename(tmp, path)
    }

    /// Every readable definition, by file name. Files that fail to parse or
    /// validate are skipped and reported in the second list.
    pub fn load_processes(&self) -> io::Result<(Vec<ValidModel>, Vec<String>)> {
        let mut paths: Vec<PathBuf> = fs::read_dir(self.root.join("processes"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "sbpm"))
            .collect();
        paths.sort();
        let mut models = Vec::new();
        let mut skipped = Vec::new();
        for path in paths {
            let shown = path.display().to_string();
            match fs::read_to_string(&path) {
                Ok(text) => match load_model(&shown, &text) {
                    Ok(m) => models.push(m),
                    Err(e) => skipped.push(e.to_string()),
                },
                Err(e) => skipped.push(format!("{shown}: {e}")),
            }
        }
        Ok((models, skipped))
    }

    pub fn append_trace(&self, instance: Uuid, records: &[TraceRecord]) -> io::Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.trace_path(instance))?;
        f.write_all(to_jsonl(records).as_bytes())
    }

    pub fn read_trace(&self, instance: Uuid) -> io::Result<String> {
        fs::read_to_string(self.trace_path(instance))
    }
}
