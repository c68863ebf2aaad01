use serde::{Deserialize, Serialize};

use crate::geometry::vec3::{self, Vec3};
use crate::geometry::GeometryError;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

/// Pinhole camera. The camera frame has x right, y down and z forward;
/// `x_cam = R·x_world + t`. Pixel centres sit on integer coordinates, so the
/// image covers `[−0.5, width − 0.5] × [−0.5, height − 0.5]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    intrinsics: Intrinsics<T>,
    rotation: [[T; 3]; 3],
    translation: Vec3<T>,
    width: usize,
    height: usize,
    near: T,
    far: T,
}

/// Result of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection<T> {
    pub pixel: [T; 2],
    pub depth: T,
    pub valid: bool,
}

/// Ray with unit direction; `near`/`far` are distances along the ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
    pub near: T,
    pub far: T,
}

impl<T: Real> Ray<T> {
    pub fn new(origin: Vec3<T>, direction: Vec3<T>, near: T, far: T) -> Self {
        Self {
            origin,
            direction: vec3::normalize(direction),
            near,
            far,
        }
    }

    pub fn at(&self, t: T) -> Vec3<T> {
        vec3::add(self.origin, vec3::scale(self.direction, t))
    }
}

fn orthonormal_tolerance<T: Real>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(100.0))
}

impl<T: Real> Camera<T> {
    pub fn new(
        intrinsics: Intrinsics<T>,
        rotation: [[T; 3]; 3],
        translation: Vec3<T>,
        width: usize,
        height: usize,
        near: T,
        far: T,
    ) -> Result<Self, GeometryError> {
        if !(intrinsics.fx > T::zero() && intrinsics.fy > T::zero()) {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(near > T::zero() && near < far) {
            return Err(GeometryError::InvalidCamera("require 0 < near < far".into()));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera("image dimensions must be nonzero".into()));
        }
        let tol = orthonormal_tolerance::<T>();
        for i in 0..3 {
            for j in 0..3 {
                let d = vec3::dot(rotation[i], rotation[j]);
                let e = if i == j { T::one() } else { T::zero() };
                if (d - e).abs() > tol {
                    return Err(GeometryError::InvalidCamera("rotation is not orthonormal".into()));
                }
            }
        }
        Ok(Self {
            intrinsics,
            rotation,
            translation,
            width,
            height,
            near,
            far,
        })
    }

    /// Camera at `eye` looking at `target`; `up` is the world up hint.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3<T>,
        target: Vec3<T>,
        up: Vec3<T>,
        intrinsics: Intrinsics<T>,
        width: usize,
        height: usize,
        near: T,
        far: T,
    ) -> Result<Self, GeometryError> {
        let forward = vec3::normalize(vec3::sub(target, eye));
        let right = vec3::cross(forward, up);
        if vec3::norm(right) < T::lit(1e-9) {
            return Err(GeometryError::InvalidCamera("up is parallel to the view direction".into()));
        }
        let right = vec3::normalize(right);
        let down = vec3::cross(forward, right);
        let rotation = [right, down, forward];
        let translation = vec3::scale(vec3::mat_vec(&rotation, eye), -T::one());
        Self::new(intrinsics, rotation, translation, width, height, near, far)
    }

    pub fn intrinsics(&self) -> &Intrinsics<T> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &[[T; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3<T> {
        self.translation
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn near(&self) -> T {
        self.near
    }

    pub fn far(&self) -> T {
        self.far
    }

    /// World-frame camera centre `−Rᵀ t`.
    pub fn center(&self) -> Vec3<T> {
        vec3::scale(vec3::mat_t_vec(&self.rotation, self.translation), -T::one())
    }

    pub fn forward_axis(&self) -> Vec3<T> {
        self.rotation[2]
    }

    pub fn world_to_camera(&self, x: Vec3<T>) -> Vec3<T> {
        vec3::add(vec3::mat_vec(&self.rotation, x), self.translation)
    }

    pub fn contains_pixel(&self, pixel: [T; 2]) -> bool {
        let half = T::lit(0.5);
        let w = T::from_usize_lossy(self.width);
        let h = T::from_usize_lossy(self.height);
        pixel[0] >= -half && pixel[0] <= w - half && pixel[1] >= -half && pixel[1] <= h - half
    }

    pub fn project_point(&self, x: Vec3<T>) -> Projection<T> {
        let p = self.world_to_camera(x);
        let z = p[2];
        if z <= T::zero() {
            return Projection {
                pixel: [T::zero(), T::zero()],
                depth: z,
                valid: false,
            };
        }
        let k = &self.intrinsics;
        let pixel = [k.fx * p[0] / z + k.cx, k.fy * p[1] / z + k.cy];
        let valid = z >= self.near && z <= self.far && self.contains_pixel(pixel);
        Projection {
            pixel,
            depth: z,
            valid,
        }
    }

    /// Ray through `pixel` from the camera centre; its `near`/`far` are the
    /// distances at which camera depth equals the camera's near/far planes.
    pub fn generate_ray(&self, pixel: [T; 2]) -> Result<Ray<T>, GeometryError> {
        if !self.contains_pixel(pixel) {
            return Err(GeometryError::PixelOutOfBounds {
                u: pixel[0].to_f64_lossy(),
                v: pixel[1].to_f64_lossy(),
            });
        }
        let k = &self.intrinsics;
        let d_cam = vec3::normalize([(pixel[0] - k.cx) / k.fx, (pixel[1] - k.cy) / k.fy, T::one()]);
        let direction = vec3::mat_t_vec(&self.rotation, d_cam);
        Ok(Ray {
            origin: self.center(),
            direction,
            near: self.near / d_cam[2],
            far: self.far / d_cam[2],
        })
    }

    /// Maps an image pixel coordinate onto a `feat_w × feat_h` feature grid
    /// covering the same field of view (half-pixel aligned).
    pub fn image_to_feature(&self, pixel: [T; 2], feat_w: usize, feat_h: usize) -> [T; 2] {
        let half = T::lit(0.5);
        let sx = T::from_usize_lossy(feat_w) / T::from_usize_lossy(self.width);
        let sy = T::from_usize_lossy(feat_h) / T::from_usize_lossy(self.height);
        [(pixel[0] + half) * sx - half, (pixel[1] + half) * sy - half]
    }

    pub fn to_config(&self) -> CameraConfig {
        let r = &self.rotation;
        CameraConfig {
            fx: self.intrinsics.fx.to_f64_lossy(),
            fy: self.intrinsics.fy.to_f64_lossy(),
            cx: self.intrinsics.cx.to_f64_lossy(),
            cy: self.intrinsics.cy.to_f64_lossy(),
            rotation: [
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ]
            .map(|v| v.to_f64_lossy()),
            translation: vec3::to_f64(self.translation),
            width: self.width,
            height: self.height,
            near: self.near.to_f64_lossy(),
            far: self.far.to_f64_lossy(),
        }
    }

    pub fn from_config(c: &CameraConfig) -> Result<Self, GeometryError> {
        let r = c.rotation.map(T::lit);
        Self::new(
            Intrinsics {
                fx: T::lit(c.fx),
                fy: T::lit(c.fy),
                cx: T::lit(c.cx),
                cy: T::lit(c.cy),
            },
            [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            vec3::cast(c.translation),
            c.width,
            c.height,
            T::lit(c.near),
            T::lit(c.far),
        )
    }
}

/// Text form of one camera. `rotation` is the row-major world→camera matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigConfig {
    camera: Vec<CameraConfig>,
}

/// Ordered set of cameras observing one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig<T> {
    cameras: Vec<Camera<T>>,
}

impl<T: Real> CameraRig<T> {
    pub fn new(cameras: Vec<Camera<T>>) -> Self {
        Self { cameras }
    }

    /// `count` cameras evenly spaced on a horizontal circle around `target`,
    /// each facing the target.
    #[allow(clippy::too_many_arguments)]
    pub fn ring(
        count: usize,
        target: Vec3<T>,
        radius: T,
        height: T,
        phase: T,
        intrinsics: Intrinsics<T>,
        width: usize,
        height_px: usize,
        near: T,
        far: T,
    ) -> Result<Self, GeometryError> {
        let two_pi = T::lit(std::f64::consts::TAU);
        let cameras = (0..count)
            .map(|i| {
                let a = phase + two_pi * T::from_usize_lossy(i) / T::from_usize_lossy(count);
                let eye = [target[0] + radius * a.cos(), target[1] + radius * a.sin(), height];
                Camera::look_at(
                    eye,
                    target,
                    [T::zero(), T::zero(), T::one()],
                    intrinsics,
                    width,
                    height_px,
                    near,
                    far,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[Camera<T>] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Camera<T>> {
        self.cameras.get(i)
    }

    /// Serializes to the documented TOML layout, one `[[camera]]` table per camera.
    pub fn to_toml(&self) -> String {
        let cfg = RigConfig {
            camera: self.cameras.iter().map(Camera::to_config).collect(),
        };
        toml::to_string(&cfg).expect("rig config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, GeometryError> {
        let cfg: RigConfig =
            toml::from_str(text).map_err(|e| GeometryError::Config(e.to_string()))?;
        let cameras = cfg
            .camera
            .iter()
            .map(Camera::from_config)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { cameras })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_camera() -> Camera<f64> {
        Camera::look_at(
            [6.0, -1.0, 3.0],
            [0.0, 0.5, 0.5],
            [0.0, 0.0, 1.0],
            Intrinsics {
                fx: 20.0,
                fy: 22.0,
                cx: 15.5,
                cy: 15.5,
            },
            32,
            32,
            0.5,
            20.0,
        )
        .unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let cam = test_camera();
        let x = vec3::add(cam.center(), vec3::scale(cam.forward_axis(), 4.0));
        let p = cam.project_point(x);
        assert!(p.valid);
        assert!((p.pixel[0] - 15.5).abs() < 1e-12 && (p.pixel[1] - 15.5).abs() < 1e-12);
        assert!((p.depth - 4.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_invalid() {
        let cam = test_camera();
        let x = vec3::sub(cam.center(), cam.forward_axis());
        assert!(!cam.project_point(x).valid);
    }

    #[test]
    fn principal_ray_is_forward() {
        let cam = test_camera();
        let r = cam.generate_ray([15.5, 15.5]).unwrap();
        let f = cam.forward_axis();
        for i in 0..3 {
            assert!((r.direction[i] - f[i]).abs() < 1e-12);
        }
        assert!((r.near - 0.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_pixel_is_error() {
        let cam = test_camera();
        assert!(cam.generate_ray([-1.0, 3.0]).is_err());
        assert!(cam.generate_ray([3.0, 32.0]).is_err());
    }

    #[test]
    fn adjacent_pixels_separate_by_inverse_focal() {
        let cam = test_camera();
        let a = cam.generate_ray([15.5, 15.5]).unwrap();
        let b = cam.generate_ray([16.5, 15.5]).unwrap();
        let angle = vec3::dot(a.direction, b.direction).min(1.0).acos();
        let expect = (1.0f64 / 20.0).atan();
        assert!((angle - expect).abs() < 1e-12);
        assert!((angle - 1.0 / 20.0).abs() < 1e-3);
    }

    #[test]
    fn corner_rays_symmetric_about_axis() {
        let cam = Camera::look_at(
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            Intrinsics {
                fx: 10.0,
                fy: 10.0,
                cx: 7.5,
                cy: 7.5,
            },
            16,
            16,
            0.1,
            10.0,
        )
        .unwrap();
        let f = cam.forward_axis();
        let cos: Vec<f64> = [[-0.5, -0.5], [15.5, -0.5], [-0.5, 15.5], [15.5, 15.5]]
            .iter()
            .map(|&p| vec3::dot(cam.generate_ray(p).unwrap().direction, f))
            .collect();
        for c in &cos {
            assert!((c - cos[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_ray_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let eye = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.5..4.0)];
            let target = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0];
            let cam = Camera::look_at(
                eye,
                target,
                [0.0, 0.0, 1.0],
                Intrinsics {
                    fx: rng.gen_range(10.0..40.0),
                    fy: rng.gen_range(10.0..40.0),
                    cx: 15.5,
                    cy: 11.5,
                },
                32,
                24,
                0.2,
                30.0,
            )
            .unwrap();
            let px: [f64; 2] = [rng.gen_range(-0.5..31.5), rng.gen_range(-0.5..23.5)];
            let ray = cam.generate_ray(px).unwrap();
            let t = rng.gen_range(ray.near..ray.far);
            let p = cam.project_point(ray.at(t));
            assert!(p.valid);
            assert!((p.pixel[0] - px[0]).abs() < 1e-6 && (p.pixel[1] - px[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn rig_toml_round_trip() {
        let rig = CameraRig::ring(
            4,
            [0.0, 0.0, 0.5],
            6.0,
            3.0,
            0.25,
            Intrinsics {
                fx: 16.0,
                fy: 16.0,
                cx: 15.5,
                cy: 15.5,
            },
            32,
            32,
            0.5,
            16.0,
        )
        .unwrap();
        let text = rig.to_toml();
        assert!(text.contains("fx") && text.contains("rotation") && text.contains("translation"));
        let back = CameraRig::<f64>::from_toml(&text).unwrap();
        assert_eq!(back, rig);
    }

    #[test]
    fn unknown_rig_key_rejected() {
        let text = "[[camera]]\nfx = 1.0\nfy = 1.0\ncx = 0.0\ncy = 0.0\nrotation = [1.0,0.0,0.0,0.0,1.0,0.0,0.0,0.0,1.0]\ntranslation = [0.0,0.0,0.0]\nwidth = 4\nheight = 4\nnear = 0.1\nfar = 2.0\nskew = 0.0\n";
        assert!(CameraRig::<f64>::from_toml(text).is_err());
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let k = Intrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        };
        let r = [[1.0, 0.0, 0.0], [0.0, 1.0, 1e-6], [0.0, 0.0, 1.0]];
        assert!(Camera::new(k, r, [0.0; 3], 4, 4, 0.1, 1.0).is_err());
    }

    #[test]
    fn single_precision_camera() {
        let cam = Camera::<f32>::look_at(
            [4.0, 0.0, 2.0],
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            Intrinsics {
                fx: 16.0,
                fy: 16.0,
                cx: 15.5,
                cy: 15.5,
            },
            32,
            32,
            0.5,
            16.0,
        )
        .unwrap();
        let r = cam.generate_ray([3.0, 20.0]).unwrap();
        let p = cam.project_point(r.at(5.0));
        assert!((p.pixel[0] - 3.0f32).abs() < 1e-3 && (p.pixel[1] - 20.0f32).abs() < 1e-3);
    }
}
