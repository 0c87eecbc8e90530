//! Dataset parsing and writing.
//!
//! Two on-disk layouts are supported:
//!
//! - **edge-json**: one JSON document holding every graph, its features,
//!   labels, and optional split masks. The writer emits every field (with
//!   `null` for absent labels) so a written dataset re-parses to exactly the
//!   same in-memory value.
//! - **flat-csv**: a directory of headerless CSV files in the style used by
//!   common graph-classification benchmark dumps: `edges.csv` with global
//!   node ids, `features.csv` with one row per node, `graph_indicator.csv`
//!   assigning each node to a graph, and either `graph_labels.csv` or
//!   `node_labels.csv`. Node ids are re-based to 0..N-1 per graph during
//!   parsing, so any consistent global numbering (0- or 1-based) works.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{GnanError, Result};
use crate::graph::{GraphInstance, SplitMasks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    EdgeJson,
    FlatCsv,
}

impl std::str::FromStr for DatasetFormat {
    type Err = GnanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge-json" => Ok(DatasetFormat::EdgeJson),
            "flat-csv" => Ok(DatasetFormat::FlatCsv),
            other => Err(GnanError::Config(format!(
                "unknown dataset format {other:?}, expected \"edge-json\" or \"flat-csv\""
            ))),
        }
    }
}

/// Reads a dataset and validates every graph. For edge-json `path` is the
/// document file; for flat-csv it is the directory holding the CSV files.
pub fn parse_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<GraphInstance>> {
    let graphs = match format {
        DatasetFormat::EdgeJson => parse_edge_json(path)?,
        DatasetFormat::FlatCsv => parse_flat_csv(path)?,
    };
    if graphs.is_empty() {
        return Err(GnanError::schema(path, "dataset contains no graphs"));
    }
    let d = graphs[0].feature_dim();
    for (idx, g) in graphs.iter().enumerate() {
        if g.feature_dim() != d {
            return Err(GnanError::schema(
                path,
                format!("graph {idx} has {} feature columns, expected {d}", g.feature_dim()),
            ));
        }
    }
    Ok(graphs)
}

/// Writes a dataset in the requested format. The output re-parses to a
/// dataset equal to `graphs`.
pub fn write_dataset(path: &Path, format: DatasetFormat, graphs: &[GraphInstance]) -> Result<()> {
    match format {
        DatasetFormat::EdgeJson => write_edge_json(path, graphs),
        DatasetFormat::FlatCsv => write_flat_csv(path, graphs),
    }
}

// ---------------------------------------------------------------- edge-json

#[derive(Serialize, Deserialize)]
struct RawDataset {
    graphs: Vec<RawGraph>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    edges: Vec<(u32, u32)>,
    features: Vec<Vec<f64>>,
    #[serde(default)]
    node_labels: Option<Vec<f64>>,
    #[serde(default)]
    graph_label: Option<f64>,
    #[serde(default)]
    masks: Option<RawMasks>,
}

#[derive(Serialize, Deserialize)]
struct RawMasks {
    train: Vec<bool>,
    val: Vec<bool>,
    test: Vec<bool>,
}

fn parse_edge_json(path: &Path) -> Result<Vec<GraphInstance>> {
    let text = fs::read_to_string(path).map_err(|e| GnanError::io(path, e))?;
    let raw: RawDataset = serde_json::from_str(&text).map_err(|e| {
        GnanError::parse_at(path, format!("line {}, column {}", e.line(), e.column()), e.to_string())
    })?;

    let mut graphs = Vec::with_capacity(raw.graphs.len());
    for (idx, rg) in raw.graphs.into_iter().enumerate() {
        let n = rg.features.len();
        if n == 0 {
            return Err(GnanError::schema(path, format!("graph {idx} has no feature rows")));
        }
        let d = rg.features[0].len();
        if d == 0 {
            return Err(GnanError::schema(path, format!("graph {idx} has no feature columns")));
        }
        let mut features = Array2::zeros((n, d));
        for (row, values) in rg.features.iter().enumerate() {
            if values.len() != d {
                return Err(GnanError::schema(
                    path,
                    format!("graph {idx} feature row {row} has {} values, expected {d}", values.len()),
                ));
            }
            for (col, &v) in values.iter().enumerate() {
                features[[row, col]] = v;
            }
        }
        let masks = rg.masks.map(|m| SplitMasks { train: m.train, val: m.val, test: m.test });
        let g = GraphInstance::new(n, &rg.edges, features, rg.node_labels, rg.graph_label, masks)
            .map_err(|e| match e {
                GnanError::Validation(msg) => GnanError::Validation(format!("graph {idx}: {msg}")),
                other => other,
            })?;
        graphs.push(g);
    }
    Ok(graphs)
}

fn write_edge_json(path: &Path, graphs: &[GraphInstance]) -> Result<()> {
    let raw = RawDataset {
        graphs: graphs
            .iter()
            .map(|g| RawGraph {
                edges: g.edges.clone(),
                features: g.features.outer_iter().map(|row| row.to_vec()).collect(),
                node_labels: g.node_labels.clone(),
                graph_label: g.graph_label,
                masks: g.masks.as_ref().map(|m| RawMasks {
                    train: m.train.clone(),
                    val: m.val.clone(),
                    test: m.test.clone(),
                }),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&raw)
        .map_err(|e| GnanError::Contract(format!("dataset serialization failed: {e}")))?;
    let mut file = fs::File::create(path).map_err(|e| GnanError::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| GnanError::io(path, e))?;
    file.write_all(b"\n").map_err(|e| GnanError::io(path, e))?;
    Ok(())
}

// ----------------------------------------------------------------- flat-csv

struct CsvTable {
    path: PathBuf,
    /// One record per line, fields as raw strings.
    records: Vec<Vec<String>>,
    /// 1-based line number per record, for error messages.
    lines: Vec<u64>,
}

fn read_csv(path: &Path) -> Result<CsvTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| GnanError::io(path, std::io::Error::other(e.to_string())))?;
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for entry in reader.records() {
        let record = entry.map_err(|e| {
            let location = e.position().map(|p| format!("line {}", p.line()));
            GnanError::Parse {
                file: path.to_path_buf(),
                location,
                message: e.to_string(),
            }
        })?;
        lines.push(record.position().map(|p| p.line()).unwrap_or(0));
        records.push(record.iter().map(str::to_owned).collect());
    }
    Ok(CsvTable { path: path.to_path_buf(), records, lines })
}

impl CsvTable {
    fn field<T: std::str::FromStr>(&self, row: usize, col: usize, what: &str) -> Result<T> {
        let text = &self.records[row][col];
        text.trim().parse().map_err(|_| {
            GnanError::parse_at(
                &self.path,
                format!("line {}", self.lines[row]),
                format!("cannot parse {what} from {text:?}"),
            )
        })
    }

    fn expect_cols(&self, cols: usize) -> Result<()> {
        for (row, record) in self.records.iter().enumerate() {
            if record.len() != cols {
                return Err(GnanError::schema(
                    &self.path,
                    format!("line {} has {} fields, expected {cols}", self.lines[row], record.len()),
                ));
            }
        }
        Ok(())
    }
}

fn parse_flat_csv(dir: &Path) -> Result<Vec<GraphInstance>> {
    let edges_path = dir.join("edges.csv");
    let features_path = dir.join("features.csv");
    let indicator_path = dir.join("graph_indicator.csv");
    let graph_labels_path = dir.join("graph_labels.csv");
    let node_labels_path = dir.join("node_labels.csv");

    let features = read_csv(&features_path)?;
    let indicator = read_csv(&indicator_path)?;
    let edges = read_csv(&edges_path)?;
    edges.expect_cols(2)?;
    indicator.expect_cols(1)?;

    let total_nodes = features.records.len();
    if indicator.records.len() != total_nodes {
        return Err(GnanError::schema(
            &indicator_path,
            format!(
                "{} indicator rows for {} feature rows",
                indicator.records.len(),
                total_nodes
            ),
        ));
    }
    if total_nodes == 0 {
        return Err(GnanError::schema(&features_path, "no feature rows"));
    }
    let d = features.records[0].len();
    features.expect_cols(d)?;

    // Graph ids may be 0- or 1-based and are ordered ascending.
    let mut graph_of_node = Vec::with_capacity(total_nodes);
    for row in 0..total_nodes {
        graph_of_node.push(indicator.field::<i64>(row, 0, "graph id")?);
    }
    let mut graph_ids: Vec<i64> = graph_of_node.clone();
    graph_ids.sort_unstable();
    graph_ids.dedup();
    let graph_index =
        |id: i64| graph_ids.binary_search(&id).expect("id came from the same list");

    // Global node id -> (graph, local index); locals follow file order.
    let mut sizes = vec![0usize; graph_ids.len()];
    let mut local_of_node = Vec::with_capacity(total_nodes);
    for &gid in &graph_of_node {
        let g = graph_index(gid);
        local_of_node.push((g, sizes[g]));
        sizes[g] += 1;
    }

    let mut feature_rows: Vec<Vec<Vec<f64>>> =
        sizes.iter().map(|&n| Vec::with_capacity(n)).collect();
    for row in 0..total_nodes {
        let mut values = Vec::with_capacity(d);
        for col in 0..d {
            values.push(features.field::<f64>(row, col, "feature value")?);
        }
        feature_rows[local_of_node[row].0].push(values);
    }

    // Node ids in edges.csv index feature rows; they may start at 0 or 1.
    // A file whose smallest referenced id is 1 and largest is exactly the
    // row count is treated as 1-based.
    let mut raw_edges: Vec<(i64, i64)> = Vec::with_capacity(edges.records.len());
    let mut min_id = i64::MAX;
    let mut max_id = i64::MIN;
    for row in 0..edges.records.len() {
        let u = edges.field::<i64>(row, 0, "node id")?;
        let v = edges.field::<i64>(row, 1, "node id")?;
        min_id = min_id.min(u).min(v);
        max_id = max_id.max(u).max(v);
        raw_edges.push((u, v));
    }
    let base = if !raw_edges.is_empty() && min_id >= 1 && max_id == total_nodes as i64 {
        1
    } else {
        0
    };

    let mut edge_lists: Vec<Vec<(u32, u32)>> = vec![Vec::new(); graph_ids.len()];
    for (row, &(u, v)) in raw_edges.iter().enumerate() {
        let (u, v) = (u - base, v - base);
        if u < 0 || v < 0 || u >= total_nodes as i64 || v >= total_nodes as i64 {
            return Err(GnanError::Validation(format!(
                "edges.csv line {}: node id out of range",
                edges.lines[row]
            )));
        }
        let (gu, lu) = local_of_node[u as usize];
        let (gv, lv) = local_of_node[v as usize];
        if gu != gv {
            return Err(GnanError::Validation(format!(
                "edges.csv line {}: edge joins nodes of different graphs",
                edges.lines[row]
            )));
        }
        edge_lists[gu].push((lu as u32, lv as u32));
    }

    let has_graph_labels = graph_labels_path.exists();
    let has_node_labels = node_labels_path.exists();
    if has_graph_labels && has_node_labels {
        return Err(GnanError::schema(
            dir,
            "both graph_labels.csv and node_labels.csv present; the task is ambiguous",
        ));
    }
    let graph_labels = if has_graph_labels {
        let table = read_csv(&graph_labels_path)?;
        table.expect_cols(1)?;
        if table.records.len() != graph_ids.len() {
            return Err(GnanError::schema(
                &graph_labels_path,
                format!("{} labels for {} graphs", table.records.len(), graph_ids.len()),
            ));
        }
        let mut labels = Vec::with_capacity(table.records.len());
        for row in 0..table.records.len() {
            labels.push(table.field::<f64>(row, 0, "graph label")?);
        }
        Some(labels)
    } else {
        None
    };
    let node_labels = if has_node_labels {
        let table = read_csv(&node_labels_path)?;
        table.expect_cols(1)?;
        if table.records.len() != total_nodes {
            return Err(GnanError::schema(
                &node_labels_path,
                format!("{} labels for {} nodes", table.records.len(), total_nodes),
            ));
        }
        let mut per_graph: Vec<Vec<f64>> = sizes.iter().map(|&n| Vec::with_capacity(n)).collect();
        for row in 0..total_nodes {
            per_graph[local_of_node[row].0].push(table.field::<f64>(row, 0, "node label")?);
        }
        Some(per_graph)
    } else {
        None
    };

    let mut graphs = Vec::with_capacity(graph_ids.len());
    for g in 0..graph_ids.len() {
        let n = sizes[g];
        if n == 0 {
            return Err(GnanError::schema(&indicator_path, format!("graph {g} has no nodes")));
        }
        let mut matrix = Array2::zeros((n, d));
        for (row, values) in feature_rows[g].iter().enumerate() {
            for (col, &v) in values.iter().enumerate() {
                matrix[[row, col]] = v;
            }
        }
        graphs.push(GraphInstance::new(
            n,
            &edge_lists[g],
            matrix,
            node_labels.as_ref().map(|nl| nl[g].clone()),
            graph_labels.as_ref().map(|gl| gl[g]),
            None,
        )?);
    }
    Ok(graphs)
}

fn write_flat_csv(dir: &Path, graphs: &[GraphInstance]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GnanError::io(dir, e))?;

    let any_masks = graphs.iter().any(|g| g.masks.is_some());
    if any_masks {
        return Err(GnanError::Config(
            "flat-csv cannot represent split masks; use edge-json".into(),
        ));
    }
    let node_labeled = graphs.iter().all(|g| g.node_labels.is_some());
    let graph_labeled = graphs.iter().all(|g| g.graph_label.is_some());
    if graphs.iter().any(|g| g.node_labels.is_some()) && !node_labeled {
        return Err(GnanError::Config("node labels present on only some graphs".into()));
    }
    if graphs.iter().any(|g| g.graph_label.is_some()) && !graph_labeled {
        return Err(GnanError::Config("graph labels present on only some graphs".into()));
    }
    if node_labeled && graph_labeled {
        return Err(GnanError::Config(
            "flat-csv stores either node labels or graph labels, not both".into(),
        ));
    }

    let open = |name: &str| -> Result<fs::File> {
        let path = dir.join(name);
        fs::File::create(&path).map_err(|e| GnanError::io(path, e))
    };

    let mut edges_file = open("edges.csv")?;
    let mut features_file = open("features.csv")?;
    let mut indicator_file = open("graph_indicator.csv")?;

    let mut base = 0usize;
    for (gid, g) in graphs.iter().enumerate() {
        for &(u, v) in &g.edges {
            writeln!(edges_file, "{},{}", base + u as usize, base + v as usize)
                .map_err(|e| GnanError::io(dir.join("edges.csv"), e))?;
        }
        for row in g.features.outer_iter() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(features_file, "{}", line.join(","))
                .map_err(|e| GnanError::io(dir.join("features.csv"), e))?;
        }
        for _ in 0..g.node_count {
            writeln!(indicator_file, "{gid}")
                .map_err(|e| GnanError::io(dir.join("graph_indicator.csv"), e))?;
        }
        base += g.node_count;
    }

    if graph_labeled {
        let mut file = open("graph_labels.csv")?;
        for g in graphs {
            writeln!(file, "{}", g.graph_label.unwrap())
                .map_err(|e| GnanError::io(dir.join("graph_labels.csv"), e))?;
        }
    }
    if node_labeled {
        let mut file = open("node_labels.csv")?;
        for g in graphs {
            for label in g.node_labels.as_ref().unwrap() {
                writeln!(file, "{label}")
                    .map_err(|e| GnanError::io(dir.join("node_labels.csv"), e))?;
            }
        }
    }
    Ok(())
}
