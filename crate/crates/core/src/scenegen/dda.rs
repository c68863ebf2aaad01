use crate::geometry::Vec3;
use crate::scalar::Real;
use crate::voxels::Grid;

/// One voxel crossed by a ray, with the parametric interval spent inside it.
/// `entry_axis` is the axis of the face the ray entered through, or `None`
/// when the walk started inside this voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdaStep<T> {
    pub voxel: usize,
    pub coords: [usize; 3],
    pub t_enter: T,
    pub t_exit: T,
    pub entry_axis: Option<usize>,
}

/// Parametric interval where the ray overlaps the grid box, with the axis of
/// the entry face (`None` when the ray origin is already inside).
pub fn clip_to_grid<T: Real>(
    grid: &Grid<T>,
    origin: Vec3<T>,
    dir: Vec3<T>,
    t_min: T,
    t_max: T,
) -> Option<(T, T, Option<usize>)> {
    let lo = grid.origin;
    let hi = grid.upper();
    let mut t0 = T::neg_infinity();
    let mut t1 = T::infinity();
    let mut axis0 = None;
    for a in 0..3 {
        if dir[a] == T::zero() {
            if origin[a] < lo[a] || origin[a] >= hi[a] {
                return None;
            }
            continue;
        }
        let inv = T::one() / dir[a];
        let mut ta = (lo[a] - origin[a]) * inv;
        let mut tb = (hi[a] - origin[a]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        if ta > t0 {
            t0 = ta;
            axis0 = Some(a);
        }
        t1 = t1.min(tb);
    }
    let start = t0.max(t_min);
    let end = t1.min(t_max);
    if !(start < end) {
        return None;
    }
    let axis = if t0 >= t_min { axis0 } else { None };
    Some((start, end, axis))
}

/// Amanatides–Woo traversal of every voxel the ray `origin + t·dir` crosses
/// for `t ∈ [t_min, t_max]`, in order. `visit` returns `false` to stop.
pub fn traverse<T: Real>(
    grid: &Grid<T>,
    origin: Vec3<T>,
    dir: Vec3<T>,
    t_min: T,
    t_max: T,
    mut visit: impl FnMut(&DdaStep<T>) -> bool,
) {
    let Some((t_start, t_end, mut entry_axis)) = clip_to_grid(grid, origin, dir, t_min, t_max) else {
        return;
    };
    let vs = grid.voxel_size;
    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_next = [T::infinity(); 3];
    let mut t_delta = [T::infinity(); 3];
    for a in 0..3 {
        let p = origin[a] + dir[a] * t_start;
        let u = ((p - grid.origin[a]) / vs).floor().to_i64().unwrap_or(0);
        let mut c = u.clamp(0, grid.dims[a] as i64 - 1);
        if entry_axis == Some(a) {
            // The entry face decides the cell on that axis exactly.
            c = if dir[a] > T::zero() { 0 } else { grid.dims[a] as i64 - 1 };
        }
        cell[a] = c;
        if dir[a] > T::zero() {
            step[a] = 1;
            let boundary = grid.origin[a] + T::lit((c + 1) as f64) * vs;
            t_next[a] = (boundary - origin[a]) / dir[a];
            t_delta[a] = vs / dir[a];
        } else if dir[a] < T::zero() {
            step[a] = -1;
            let boundary = grid.origin[a] + T::lit(c as f64) * vs;
            t_next[a] = (boundary - origin[a]) / dir[a];
            t_delta[a] = -vs / dir[a];
        }
    }
    let mut t = t_start;
    loop {
        let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
            0
        } else if t_next[1] <= t_next[2] {
            1
        } else {
            2
        };
        let t_exit = t_next[axis].min(t_end);
        let coords = [cell[0] as usize, cell[1] as usize, cell[2] as usize];
        let s = DdaStep {
            voxel: grid.index(coords),
            coords,
            t_enter: t,
            t_exit,
            entry_axis,
        };
        if !visit(&s) || t_next[axis] >= t_end {
            return;
        }
        cell[axis] += step[axis];
        if cell[axis] < 0 || cell[axis] >= grid.dims[axis] as i64 {
            return;
        }
        t = t_next[axis];
        t_next[axis] += t_delta[axis];
        entry_axis = Some(axis);
    }
}

/// First voxel along the ray for which `occupied` holds.
pub fn first_hit<T: Real>(
    grid: &Grid<T>,
    origin: Vec3<T>,
    dir: Vec3<T>,
    t_min: T,
    t_max: T,
    occupied: impl Fn(usize) -> bool,
) -> Option<DdaStep<T>> {
    let mut hit = None;
    traverse(grid, origin, dir, t_min, t_max, |s| {
        if occupied(s.voxel) {
            hit = Some(*s);
            false
        } else {
            true
        }
    });
    hit
}
