//! Instance boundaries on label grids.
//!
//! A boundary cell is a member cell that is 4-adjacent to a non-member cell or
//! to the image border. Loops are traced along the pixel cracks separating
//! members from non-members: every boundary cell owns at least one such crack,
//! and crack edges always close into loops. Corners are lattice points, so a
//! loop around the single cell `(x, y)` is `(x,y) (x+1,y) (x+1,y+1) (x,y+1)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::RenderError;
use crate::mask_store::{IdMap, InstanceId};

/// A closed loop of lattice corners; the last point connects back to the first.
/// Members lie to the right of the direction of travel (y grows downward).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<[u32; 2]>,
}

type Dir = (i32, i32);

fn turn_right((dx, dy): Dir) -> Dir {
    (-dy, dx)
}

/// Member cell on the right of a unit crack step from `start` along `dir`.
fn member_of_step(start: [u32; 2], dir: Dir) -> (u32, u32) {
    let [x, y] = start;
    match dir {
        (1, 0) => (x, y),
        (0, 1) => (x - 1, y),
        (-1, 0) => (x - 1, y - 1),
        (0, -1) => (x, y - 1),
        _ => unreachable!("unit step"),
    }
}

impl Polyline {
    /// Member cells along every crack of the loop, in traversal order.
    pub fn edge_cells(&self) -> Vec<(u32, u32)> {
        let mut cells = Vec::new();
        let n = self.points.len();
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            let dir = (
                (b[0] as i64 - a[0] as i64).signum() as i32,
                (b[1] as i64 - a[1] as i64).signum() as i32,
            );
            let len = (b[0] as i64 - a[0] as i64).abs() + (b[1] as i64 - a[1] as i64).abs();
            let mut p = a;
            for _ in 0..len {
                cells.push(member_of_step(p, dir));
                p = [(p[0] as i64 + dir.0 as i64) as u32, (p[1] as i64 + dir.1 as i64) as u32];
            }
        }
        cells
    }
}

fn is_member(map: &IdMap, id: InstanceId, x: i64, y: i64) -> bool {
    x >= 0 && y >= 0 && x < map.width() as i64 && y < map.height() as i64 && map.get(x as u32, y as u32) == id
}

/// Row-major boundary mask of `id` (true for boundary cells).
pub fn boundary_mask(map: &IdMap, id: InstanceId) -> Vec<bool> {
    let (w, h) = (map.width(), map.height());
    let mut out = vec![false; w as usize * h as usize];
    for y in 0..h {
        for x in 0..w {
            if map.get(x, y) != id {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            let edge = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|&(dx, dy)| !is_member(map, id, xi + dx, yi + dy));
            out[(y * w + x) as usize] = edge;
        }
    }
    out
}

/// Closed crack loops around every component and hole of `id`.
pub fn trace_outline(map: &IdMap, id: InstanceId) -> Result<Vec<Polyline>, RenderError> {
    // Directed crack edges, clockwise around each member cell.
    let mut edges: Vec<([u32; 2], Dir)> = Vec::new();
    let (w, h) = (map.width(), map.height());
    for y in 0..h {
        for x in 0..w {
            if map.get(x, y) != id {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            if !is_member(map, id, xi, yi - 1) {
                edges.push(([x, y], (1, 0)));
            }
            if !is_member(map, id, xi + 1, yi) {
                edges.push(([x + 1, y], (0, 1)));
            }
            if !is_member(map, id, xi, yi + 1) {
                edges.push(([x + 1, y + 1], (-1, 0)));
            }
            if !is_member(map, id, xi - 1, yi) {
                edges.push(([x, y + 1], (0, -1)));
            }
        }
    }
    if edges.is_empty() {
        return Err(RenderError::AbsentInstance(id));
    }

    let mut outgoing: HashMap<[u32; 2], Vec<usize>> = HashMap::with_capacity(edges.len());
    for (i, (start, _)) in edges.iter().enumerate() {
        outgoing.entry(*start).or_default().push(i);
    }
    let end_of = |(start, (dx, dy)): ([u32; 2], Dir)| {
        [
            (start[0] as i64 + dx as i64) as u32,
            (start[1] as i64 + dy as i64) as u32,
        ]
    };
    // At a saddle corner (two diagonal members) the right turn keeps each
    // member's loop separate.
    let next_edge = |i: usize| -> usize {
        let (_, dir) = edges[i];
        let options = &outgoing[&end_of(edges[i])];
        if options.len() == 1 {
            return options[0];
        }
        let want = turn_right(dir);
        *options.iter().find(|&&j| edges[j].1 == want).unwrap_or(&options[0])
    };

    let mut used = vec![false; edges.len()];
    let mut loops = Vec::new();
    for first in 0..edges.len() {
        if used[first] {
            continue;
        }
        let mut steps: Vec<([u32; 2], Dir)> = Vec::new();
        let mut cur = first;
        loop {
            used[cur] = true;
            steps.push(edges[cur]);
            cur = next_edge(cur);
            if cur == first {
                break;
            }
        }
        loops.push(simplify(&steps));
    }
    Ok(loops)
}

/// Keeps only the corners where direction changes.
fn simplify(steps: &[([u32; 2], Dir)]) -> Polyline {
    let n = steps.len();
    let points = (0..n)
        .filter(|&i| steps[(i + n - 1) % n].1 != steps[i].1)
        .map(|i| steps[i].0)
        .collect();
    Polyline { points }
}
