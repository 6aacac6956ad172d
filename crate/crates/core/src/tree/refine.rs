use super::{AirwayTree, AnatomicalLabel, AnatomyParams, Branch, ParseParams};
use crate::error::{Error, Result};

/// Moving average over each branch's points; the window shrinks near the
/// ends so first and last points stay put. `centerline` keeps the original
/// skeleton voxels, so lookups against masks are unaffected.
pub fn smooth_centerlines(tree: &AirwayTree, window: usize) -> Result<AirwayTree> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidParams(format!(
            "smoothing window must be odd, got {window}"
        )));
    }
    let (mut branches, root, spacing, dims) = tree.clone().into_parts();
    let half = window / 2;
    for b in &mut branches {
        let p = &b.points;
        let n = p.len();
        let smoothed = (0..n)
            .map(|i| {
                let h = half.min(i).min(n - 1 - i);
                let span = &p[i - h..=i + h];
                let k = span.len() as f64;
                [0, 1, 2].map(|a| span.iter().map(|q| q[a]).sum::<f64>() / k)
            })
            .collect();
        b.points = smoothed;
        b.refresh(spacing);
    }
    Ok(AirwayTree::from_parts_unchecked(branches, root, spacing, dims))
}

/// Drops short leaf spurs and merges pass-through branches until nothing
/// changes, then renumbers branches in breadth-first order.
///
/// Leaves within `prune_max_generation_protect` hops of the root are kept.
pub fn prune(tree: &AirwayTree, params: &ParseParams) -> AirwayTree {
    let (branches, root, spacing, dims) = tree.clone().into_parts();
    let mut slots: Vec<Option<Branch>> = branches.into_iter().map(Some).collect();
    loop {
        let mut changed = false;

        let depth = depths(&slots, root);
        let spurs: Vec<usize> = (0..slots.len())
            .filter(|&i| {
                slots[i].as_ref().is_some_and(|b| {
                    i != root
                        && b.is_leaf()
                        && depth[i] > params.prune_max_generation_protect
                        && b.length_vox() < params.prune_min_len_vox
                })
            })
            .collect();
        for i in spurs {
            let b = slots[i].take().unwrap();
            let p = b.parent.unwrap();
            slots[p].as_mut().unwrap().children.retain(|&c| c != i);
            changed = true;
        }

        for i in 0..slots.len() {
            while let Some(c) = slots[i]
                .as_ref()
                .and_then(|b| (b.children.len() == 1).then(|| b.children[0]))
            {
                let child = slots[c].take().unwrap();
                let b = slots[i].as_mut().unwrap();
                let skip = usize::from(b.centerline.last() == child.centerline.first());
                b.centerline.extend_from_slice(&child.centerline[skip..]);
                b.points.extend_from_slice(&child.points[skip.min(child.points.len())..]);
                b.radii.extend_from_slice(&child.radii[skip.min(child.radii.len())..]);
                b.children = child.children;
                b.refresh(spacing);
                for &g in &b.children.clone() {
                    slots[g].as_mut().unwrap().parent = Some(i);
                }
                changed = true;
            }
        }

        if !changed {
            break;
        }
    }
    renumber(slots, root, spacing, dims)
}

fn depths(slots: &[Option<Branch>], root: usize) -> Vec<usize> {
    let mut depth = vec![0; slots.len()];
    let mut stack = vec![root];
    while let Some(i) = stack.pop() {
        for &c in &slots[i].as_ref().unwrap().children {
            depth[c] = depth[i] + 1;
            stack.push(c);
        }
    }
    depth
}

fn renumber(
    mut slots: Vec<Option<Branch>>,
    root: usize,
    spacing: [f64; 3],
    dims: crate::volume::Dims,
) -> AirwayTree {
    let mut order = vec![root];
    let mut k = 0;
    while k < order.len() {
        order.extend_from_slice(&slots[order[k]].as_ref().unwrap().children);
        k += 1;
    }
    let mut new_id = vec![usize::MAX; slots.len()];
    for (n, &old) in order.iter().enumerate() {
        new_id[old] = n;
    }
    let branches = order
        .iter()
        .map(|&old| {
            let mut b = slots[old].take().unwrap();
            b.id = new_id[old];
            b.parent = b.parent.map(|p| new_id[p]);
            for c in &mut b.children {
                *c = new_id[*c];
            }
            b
        })
        .collect();
    AirwayTree::from_parts_unchecked(branches, 0, spacing, dims)
}

/// Generation = hop count from the root.
pub fn grade_topology(tree: &AirwayTree) -> AirwayTree {
    let depth = tree.depths();
    let (mut branches, root, spacing, dims) = tree.clone().into_parts();
    for (b, d) in branches.iter_mut().zip(depth) {
        b.generation = Some(d);
    }
    AirwayTree::from_parts_unchecked(branches, root, spacing, dims)
}

fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    dot.acos().to_degrees()
}

/// Labels branches by effective generation.
///
/// The effective generation is the graded one, except that a generation-2
/// branch continuing its parent almost straight (angle below
/// `max_angle_deg`) at comparable width (radius at least `min_radius_ratio`
/// of the parent's) is treated as part of its parent: it takes the parent's
/// label and everything below it moves up one level.
pub fn match_anatomy(tree: &AirwayTree, params: &AnatomyParams) -> Result<AirwayTree> {
    params.validate()?;
    if !tree.is_graded() {
        return Err(Error::UngradedTree);
    }
    let (mut branches, root, spacing, dims) = tree.clone().into_parts();
    let mut effective = vec![0usize; branches.len()];
    for id in tree.bfs_order() {
        let b = &branches[id];
        let Some(p) = b.parent else {
            effective[id] = 0;
            continue;
        };
        let parent = &branches[p];
        let continues = b.generation == Some(2)
            && match (b.direction(), parent.direction()) {
                (Some(d), Some(pd)) => angle_deg(d, pd) < params.max_angle_deg,
                _ => false,
            }
            && b.mean_radius_vox >= params.min_radius_ratio * parent.mean_radius_vox;
        effective[id] = if continues {
            effective[p]
        } else {
            effective[p] + 1
        };
    }
    for (b, e) in branches.iter_mut().zip(effective) {
        b.label = AnatomicalLabel::for_generation(e);
    }
    Ok(AirwayTree::from_parts_unchecked(branches, root, spacing, dims))
}
