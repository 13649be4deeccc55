//! Prediction tables: record a backend's answers, replay them in-process.
//!
//! A table file holds one JSON object per line,
//! `{"slots":[null,5,...],"predictions":{"0":[[t,p],...],...}}`, keyed by the
//! exact response slots of the request. The same file drives the protocol
//! stub server.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserRequest, DenoiserResponse};
use crate::error::{DenoiserError, Error, Result};
use crate::state::{TokenId, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub slots: Vec<Option<TokenId>>,
    pub predictions: DenoiserResponse,
}

#[derive(Clone, Debug, Default)]
pub struct PredictionTable {
    entries: Vec<TableEntry>,
    index: HashMap<Vec<Option<TokenId>>, usize>,
}

impl PredictionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, slots: Vec<Option<TokenId>>, predictions: DenoiserResponse) {
        match self.index.get(&slots) {
            Some(&i) => self.entries[i].predictions = predictions,
            None => {
                self.index.insert(slots.clone(), self.entries.len());
                self.entries.push(TableEntry { slots, predictions });
            }
        }
    }

    pub fn lookup(&self, slots: &[Option<TokenId>]) -> Option<&DenoiserResponse> {
        self.index.get(slots).map(|&i| &self.entries[i].predictions)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TableEntry] {
        &self.entries
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut table = PredictionTable::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TableEntry = serde_json::from_str(&line).map_err(|e| Error::TraceFormat {
                line: idx + 1,
                message: e.to_string(),
            })?;
            table.insert(entry.slots, entry.predictions);
        }
        Ok(table)
    }
}

/// Replays a [`PredictionTable`]; unknown states fail with `unknown_state`.
#[derive(Clone, Debug)]
pub struct TableDenoiser {
    table: PredictionTable,
    vocab: Option<Vocabulary>,
    name: String,
}

impl TableDenoiser {
    pub fn new(table: PredictionTable, name: impl Into<String>) -> Self {
        TableDenoiser {
            table,
            vocab: None,
            name: name.into(),
        }
    }

    pub fn with_vocabulary(mut self, vocab: Vocabulary) -> Self {
        self.vocab = Some(vocab);
        self
    }
}

impl Denoiser for TableDenoiser {
    fn predict(&mut self, request: &DenoiserRequest) -> Result<DenoiserResponse, DenoiserError> {
        request.check()?;
        self.table
            .lookup(&request.response_slots)
            .cloned()
            .ok_or_else(|| DenoiserError::Remote("unknown_state".into()))
    }

    fn vocabulary(&self) -> Option<&Vocabulary> {
        self.vocab.as_ref()
    }

    fn identity(&self) -> String {
        format!("table:{}", self.name)
    }
}

/// Wraps a denoiser and records every answered request into a table.
pub struct Recorder<D> {
    inner: D,
    table: PredictionTable,
}

impl<D: Denoiser> Recorder<D> {
    pub fn new(inner: D) -> Self {
        Recorder {
            inner,
            table: PredictionTable::new(),
        }
    }

    pub fn into_table(self) -> PredictionTable {
        self.table
    }
}

impl<D: Denoiser> Denoiser for Recorder<D> {
    fn predict(&mut self, request: &DenoiserRequest) -> Result<DenoiserResponse, DenoiserError> {
        let resp = self.inner.predict(request)?;
        self.table.insert(request.response_slots.clone(), resp.clone());
        Ok(resp)
    }

    fn vocabulary(&self) -> Option<&Vocabulary> {
        self.inner.vocabulary()
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }
}
