use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Graph, GraphEdge, GraphNode, NodeKind};
use crate::error::{Error, Result};

pub const NODES_FILE: &str = "nodes.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const CYPHER_FILE: &str = "graph.cypher";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    TripletCsv,
    Cypher,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet_csv" | "csv" => Ok(ExportFormat::TripletCsv),
            "cypher" => Ok(ExportFormat::Cypher),
            _ => Err(Error::param(format!("unknown export format {s:?}"))),
        }
    }
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Data(format!("csv: {e}"))
}

fn label(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::ConstitutionDoc => "ConstitutionDoc",
        NodeKind::StatuteDoc => "StatuteDoc",
        NodeKind::SupremeCase => "SupremeCase",
        NodeKind::AppealsCase => "AppealsCase",
        NodeKind::GenericDoc => "GenericDoc",
        NodeKind::Topic => "Topic",
        NodeKind::Keyword => "Keyword",
        NodeKind::BowToken => "BowToken",
        NodeKind::ExternalCitation => "ExternalCitation",
    }
}

/// Cypher string literal. JSON string escapes are valid Cypher escapes.
fn lit(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

impl Graph {
    /// `id,kind,attrs_json`, one row per node ordered by id.
    pub fn to_nodes_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "kind", "attrs_json"]).map_err(csv_err)?;
        for n in self.nodes() {
            let attrs = serde_json::to_string(&n.attrs)?;
            w.write_record([n.id.as_str(), n.kind.as_str(), attrs.as_str()])
                .map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(csv_err)?).map_err(csv_err)
    }

    /// `head,relation,tail`, one row per edge ordered by (head, relation, tail).
    pub fn to_edges_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["head", "relation", "tail"]).map_err(csv_err)?;
        for e in self.edges() {
            w.write_record([e.head.as_str(), e.relation.as_str(), e.tail.as_str()])
                .map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(csv_err)?).map_err(csv_err)
    }

    /// `MERGE` statements for all nodes, then all relationships.
    pub fn to_cypher(&self) -> String {
        let mut s = String::new();
        let counts = self.out_edges_by_kind();
        s.push_str("// out edges counted by head node kind\n");
        for (k, n) in &counts {
            let _ = writeln!(s, "// {k}: {n}");
        }
        for n in self.nodes() {
            let _ = write!(s, "MERGE (n:{} {{id: {}}})", label(n.kind), lit(&n.id));
            if !n.attrs.is_empty() {
                let props: Vec<String> = n
                    .attrs
                    .iter()
                    .map(|(k, v)| format!("`{}`: {}", k.replace('`', "``"), lit(v)))
                    .collect();
                let _ = write!(s, " SET n += {{{}}}", props.join(", "));
            }
            s.push_str(";\n");
        }
        for e in self.edges() {
            let _ = writeln!(
                s,
                "MATCH (a {{id: {}}}), (b {{id: {}}}) MERGE (a)-[:{}]->(b);",
                lit(&e.head),
                lit(&e.tail),
                e.relation
            );
        }
        s
    }

    /// Write the export files into `dir` and return their paths.
    pub fn export(&self, format: ExportFormat, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = match format {
            ExportFormat::TripletCsv => vec![
                (dir.join(NODES_FILE), self.to_nodes_csv()?),
                (dir.join(EDGES_FILE), self.to_edges_csv()?),
            ],
            ExportFormat::Cypher => vec![(dir.join(CYPHER_FILE), self.to_cypher())],
        };
        for (p, body) in &files {
            fs::write(p, body).map_err(|e| Error::io(p, e))?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }

    pub fn from_csv_strings(nodes_csv: &str, edges_csv: &str) -> Result<Graph> {
        let mut nodes = Vec::new();
        let mut r = csv::Reader::from_reader(nodes_csv.as_bytes());
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != 3 {
                return Err(Error::Data(format!("node row has {} fields, expected 3", rec.len())));
            }
            let attrs: BTreeMap<String, String> = serde_json::from_str(&rec[2])?;
            nodes.push(GraphNode {
                id: rec[0].to_string(),
                kind: rec[1].parse()?,
                attrs,
            });
        }
        let mut edges = Vec::new();
        let mut r = csv::Reader::from_reader(edges_csv.as_bytes());
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != 3 {
                return Err(Error::Data(format!("edge row has {} fields, expected 3", rec.len())));
            }
            edges.push(GraphEdge {
                head: rec[0].to_string(),
                relation: rec[1].parse()?,
                tail: rec[2].to_string(),
            });
        }
        Graph::from_parts(nodes, edges)
    }

    /// Load a graph written by `export(ExportFormat::TripletCsv, dir)`.
    pub fn import(dir: impl AsRef<Path>) -> Result<Graph> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        };
        Graph::from_csv_strings(&read(NODES_FILE)?, &read(EDGES_FILE)?)
    }
}
