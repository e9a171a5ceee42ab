use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, Graph, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Edgelist,
}

impl Format {
    /// `.json` is JSON; anything else is read as an edge list.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Edgelist,
        }
    }
}

/// Features assigned to graphs stored without any.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FeatureFill {
    #[default]
    Constant,
    /// One-hot node degree, width = max degree over the dataset + 1.
    DegreeOneHot,
}

#[derive(Serialize, Deserialize)]
struct RawDataset {
    name: String,
    task: Task,
    graphs: Vec<RawGraph>,
    #[serde(default)]
    graph_labels: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    features: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    node_labels: Option<Vec<usize>>,
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    load_dataset_with(path, format, FeatureFill::Constant)
}

pub fn load_dataset_with(path: &Path, format: Format, fill: FeatureFill) -> Result<Dataset> {
    let source = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::data(&source, "-", e.to_string()))?;
    let mut dataset = match format {
        Format::Json => parse_json(&text, &source)?,
        Format::Edgelist => parse_edgelist(&text, path, &source)?,
    };
    fill_features(&mut dataset, fill);
    Ok(dataset)
}

fn parse_json(text: &str, source: &str) -> Result<Dataset> {
    let raw: RawDataset = serde_json::from_str(text)
        .map_err(|e| Error::data(source, format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    let mut graphs = Vec::with_capacity(raw.graphs.len());
    for (gi, rg) in raw.graphs.into_iter().enumerate() {
        let at = |field: &str| format!("graphs[{gi}].{field}");
        for (k, &[u, v]) in rg.edges.iter().enumerate() {
            if u >= rg.num_nodes || v >= rg.num_nodes {
                return Err(Error::data(
                    source,
                    at(&format!("edges[{k}]")),
                    format!("edge ({u}, {v}) references a node >= num_nodes {}", rg.num_nodes),
                ));
            }
        }
        let features = match rg.features {
            None => None,
            Some(rows) => {
                if rows.len() != rg.num_nodes {
                    return Err(Error::data(
                        source,
                        at("features"),
                        format!("{} rows for {} nodes", rows.len(), rg.num_nodes),
                    ));
                }
                let width = rows.first().map_or(0, Vec::len);
                if let Some(r) = rows.iter().position(|r| r.len() != width) {
                    return Err(Error::data(source, at(&format!("features[{r}]")), format!("expected {width} columns")));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                Some(Array2::from_shape_vec((rg.num_nodes, width), flat).expect("rectangular"))
            }
        };
        if let Some(l) = &rg.node_labels {
            if l.len() != rg.num_nodes {
                return Err(Error::data(
                    source,
                    at("node_labels"),
                    format!("{} labels for {} nodes", l.len(), rg.num_nodes),
                ));
            }
        }
        let edges = rg.edges.iter().map(|&[u, v]| (u, v));
        let g = Graph::new(rg.num_nodes, edges, features, rg.node_labels).map_err(|e| Error::data(source, at("graph"), e.to_string()))?;
        graphs.push(g);
    }
    let d = Dataset {
        name: raw.name,
        task: raw.task,
        graphs,
        graph_labels: raw.graph_labels,
    };
    d.validate().map_err(|e| Error::data(source, "$", e.to_string()))?;
    Ok(d)
}

fn labels_path(path: &Path) -> PathBuf {
    path.with_extension("labels")
}

fn parse_edgelist(text: &str, path: &Path, source: &str) -> Result<Dataset> {
    let mut edges = Vec::new();
    let mut max_id = None::<usize>;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("line {}", lineno + 1);
        let mut fields = line.split_whitespace();
        let mut next = || -> Result<usize> {
            let tok = fields.next().ok_or_else(|| Error::data(source, loc(), "expected two node ids"))?;
            tok.parse()
                .map_err(|_| Error::data(source, loc(), format!("invalid node id {tok:?}")))
        };
        let (u, v) = (next()?, next()?);
        if fields.next().is_some() {
            return Err(Error::data(source, loc(), "expected exactly two fields"));
        }
        max_id = Some(max_id.map_or(u.max(v), |m: usize| m.max(u).max(v)));
        edges.push((u, v));
    }

    let lpath = labels_path(path);
    let lsource = lpath.display().to_string();
    let labels = match fs::read_to_string(&lpath) {
        Ok(t) => {
            let mut labels = Vec::new();
            for (lineno, line) in t.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                labels.push(line.parse::<usize>().map_err(|_| {
                    Error::data(&lsource, format!("line {}", lineno + 1), format!("invalid label {line:?}"))
                })?);
            }
            Some(labels)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::data(&lsource, "-", e.to_string())),
    };

    let num_nodes = max_id.map_or(0, |m| m + 1).max(labels.as_ref().map_or(0, Vec::len));
    if let Some(l) = &labels {
        if l.len() != num_nodes {
            return Err(Error::data(
                &lsource,
                format!("line {}", l.len()),
                format!("{} labels for {num_nodes} nodes in {source}", l.len()),
            ));
        }
    }
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    let g = Graph::new(num_nodes, edges, None, labels).map_err(|e| Error::data(source, "-", e.to_string()))?;
    Ok(Dataset {
        name,
        task: Task::NodeClassification,
        graphs: vec![g],
        graph_labels: None,
    })
}

fn fill_features(d: &mut Dataset, fill: FeatureFill) {
    let width = match fill {
        FeatureFill::Constant => 1,
        FeatureFill::DegreeOneHot => {
            d.graphs.iter().flat_map(|g| g.degrees()).max().unwrap_or(0) + 1
        }
    };
    for g in &mut d.graphs {
        if g.features.is_some() {
            continue;
        }
        g.features = Some(match fill {
            FeatureFill::Constant => Array2::ones((g.num_nodes, 1)),
            FeatureFill::DegreeOneHot => {
                let mut f = Array2::zeros((g.num_nodes, width));
                for (i, deg) in g.degrees().into_iter().enumerate() {
                    f[[i, deg]] = 1.0;
                }
                f
            }
        });
    }
}

/// Writes `d` in the JSON dataset schema; floats round-trip exactly.
pub fn save_dataset_json(d: &Dataset, path: &Path) -> Result<()> {
    let raw = RawDataset {
        name: d.name.clone(),
        task: d.task,
        graphs: d
            .graphs
            .iter()
            .map(|g| RawGraph {
                num_nodes: g.num_nodes,
                edges: g.edges.iter().map(|&(u, v)| [u, v]).collect(),
                features: g.features.as_ref().map(|f| f.rows().into_iter().map(|r| r.to_vec()).collect()),
                node_labels: g.node_labels.clone(),
            })
            .collect(),
        graph_labels: d.graph_labels.clone(),
    };
    let file = fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &raw)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn json_node_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.json",
            r#"{"name":"a","task":"node","graphs":[{"num_nodes":3,"edges":[[0,1],[1,2]],"features":null,"node_labels":[0,0,1]}],"graph_labels":null}"#,
        );
        let d = load_dataset(&p, Format::Json).unwrap();
        assert_eq!(d.task, Task::NodeClassification);
        assert_eq!(d.graphs[0].num_nodes(), 3);
        assert_eq!(d.graphs[0].features().unwrap(), &Array2::<f64>::ones((3, 1)));
    }

    #[test]
    fn json_graph_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "g.json",
            r#"{"name":"g","task":"graph","graphs":[{"num_nodes":2,"edges":[[0,1]]},{"num_nodes":1,"edges":[]}],"graph_labels":[0,1]}"#,
        );
        let d = load_dataset(&p, Format::Json).unwrap();
        assert_eq!(d.task, Task::GraphClassification);
        assert_eq!(d.graphs.len(), 2);
    }

    #[test]
    fn edgelist_with_constant_features() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.txt", "0 1\n1 2\n");
        let d = load_dataset(&p, Format::from_path(&p)).unwrap();
        assert_eq!(d.graphs[0].features().unwrap(), &Array2::<f64>::ones((3, 1)));
        assert_eq!(d.graphs[0].edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn edgelist_labels_sibling() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.edges", "1 0\n");
        write(dir.path(), "e.labels", "3\n4\n");
        let d = load_dataset(&p, Format::Edgelist).unwrap();
        assert_eq!(d.graphs[0].node_labels().unwrap(), &[3, 4]);
        assert_eq!(d.name, "e");
    }

    #[test]
    fn errors_carry_positions() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.txt", "0 1\n1 x\n");
        let msg = load_dataset(&p, Format::Edgelist).unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");

        let p = write(
            dir.path(),
            "dangling.json",
            r#"{"name":"d","task":"node","graphs":[{"num_nodes":2,"edges":[[0,1],[1,5]],"node_labels":[0,1]}]}"#,
        );
        let err = load_dataset(&p, Format::Json).unwrap_err();
        assert!(err.is_data_error());
        assert!(err.to_string().contains("graphs[0].edges[1]"), "{err}");

        let p = write(
            dir.path(),
            "count.json",
            r#"{"name":"c","task":"graph","graphs":[{"num_nodes":1,"edges":[]}],"graph_labels":[0,1]}"#,
        );
        assert!(load_dataset(&p, Format::Json).unwrap_err().is_data_error());

        let p = write(dir.path(), "syntax.json", "{\n\"name\": }");
        let msg = load_dataset(&p, Format::Json).unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn degree_one_hot_fill() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.txt", "0 1\n1 2\n");
        let d = load_dataset_with(&p, Format::Edgelist, FeatureFill::DegreeOneHot).unwrap();
        assert_eq!(d.graphs[0].features().unwrap(), &array![[0., 1., 0.], [0., 0., 1.], [0., 1., 0.]]);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::new(3, [(0, 1), (2, 1)], Some(array![[0.1, 1.0 / 3.0], [-2.5e-17, 7.0], [1e300, 0.0]]), Some(vec![1, 0, 1]))
            .unwrap();
        let d = Dataset::new("rt", Task::NodeClassification, vec![g], None).unwrap();
        let p = dir.path().join("rt.json");
        save_dataset_json(&d, &p).unwrap();
        let back = load_dataset(&p, Format::Json).unwrap();
        assert_eq!(back, d);
        save_dataset_json(&back, &p).unwrap();
        assert_eq!(load_dataset(&p, Format::Json).unwrap(), d);
    }
}
