//! Gridworlds: text maps turned into 4-connected unit-weight graphs.
//!
//! Map format, one row per line:
//!
//! ```text
//! #  wall (no node)
//! .  free cell
//! S  start      (free)
//! G  true goal  (free)
//! D  decoy goal (free)
//! ```
//!
//! Free cells become nodes numbered in row-major order. All rows must have the
//! same length.

use std::path::Path;

use crate::graph::{NodeId, WeightedGraph};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GridWorld {
    width: usize,
    height: usize,
    node_of_cell: Vec<Option<NodeId>>,
    cell_of_node: Vec<(usize, usize)>,
    graph: WeightedGraph,
    pub start: Option<NodeId>,
    pub goal: Option<NodeId>,
    pub decoy: Option<NodeId>,
}

impl GridWorld {
    pub fn open(width: usize, height: usize) -> Self {
        let row = ".".repeat(width);
        let text = vec![row; height].join("\n");
        Self::parse(&text).expect("open grid parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "map is empty".into(),
            });
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut node_of_cell = vec![None; width * height];
        let mut cell_of_node = Vec::new();
        let mut markers: [Option<NodeId>; 3] = [None; 3];
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::Parse {
                    line: r + 1,
                    message: format!(
                        "row has {} cells, expected {width} (map must be rectangular)",
                        row.chars().count()
                    ),
                });
            }
            for (c, ch) in row.chars().enumerate() {
                let marker = match ch {
                    '#' => continue,
                    '.' => None,
                    'S' => Some(0),
                    'G' => Some(1),
                    'D' => Some(2),
                    other => {
                        return Err(Error::Parse {
                            line: r + 1,
                            message: format!("unknown cell character {other:?}"),
                        })
                    }
                };
                let id = cell_of_node.len();
                node_of_cell[r * width + c] = Some(id);
                cell_of_node.push((r, c));
                if let Some(slot) = marker {
                    if markers[slot].replace(id).is_some() {
                        return Err(Error::Parse {
                            line: r + 1,
                            message: format!("marker {ch} appears more than once"),
                        });
                    }
                }
            }
        }
        let mut edges = Vec::new();
        for (id, &(r, c)) in cell_of_node.iter().enumerate() {
            if c + 1 < width {
                if let Some(right) = node_of_cell[r * width + c + 1] {
                    edges.push((id, right, 1.0));
                }
            }
            if r + 1 < height {
                if let Some(down) = node_of_cell[(r + 1) * width + c] {
                    edges.push((id, down, 1.0));
                }
            }
        }
        let coords = cell_of_node
            .iter()
            .map(|&(r, c)| [c as f64, r as f64])
            .collect();
        let graph = WeightedGraph::from_edges(cell_of_node.len(), &edges)?.with_coords(coords)?;
        Ok(Self {
            width,
            height,
            node_of_cell,
            cell_of_node,
            graph,
            start: markers[0],
            goal: markers[1],
            decoy: markers[2],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn into_graph(self) -> WeightedGraph {
        self.graph
    }

    pub fn node_at(&self, row: usize, col: usize) -> Option<NodeId> {
        if row >= self.height || col >= self.width {
            return None;
        }
        self.node_of_cell[row * self.width + col]
    }

    /// `(row, col)` of a node.
    pub fn cell_of(&self, node: NodeId) -> (usize, usize) {
        self.cell_of_node[node]
    }

    pub fn is_wall(&self, row: usize, col: usize) -> bool {
        self.node_at(row, col).is_none()
    }

    /// Resolves a `"row,col"` cell reference to a free-cell node.
    pub fn parse_cell(&self, text: &str) -> Result<NodeId> {
        let parts: Vec<_> = text.split(',').map(str::trim).collect();
        let parsed = match parts.as_slice() {
            [r, c] => r.parse::<usize>().ok().zip(c.parse::<usize>().ok()),
            _ => None,
        };
        let (row, col) = parsed.ok_or_else(|| {
            Error::InvalidArgument(format!("cell reference {text:?} is not of the form row,col"))
        })?;
        self.node_at(row, col).ok_or_else(|| {
            Error::InvalidArgument(format!("cell ({row},{col}) is a wall or outside the map"))
        })
    }

    pub fn to_map_string(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let ch = match self.node_at(r, c) {
                    None => '#',
                    Some(n) if Some(n) == self.start => 'S',
                    Some(n) if Some(n) == self.goal => 'G',
                    Some(n) if Some(n) == self.decoy => 'D',
                    Some(_) => '.',
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}
