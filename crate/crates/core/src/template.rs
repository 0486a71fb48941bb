//! Articulated template body: skinned triangle mesh, skeleton, and the
//! forward-kinematics + linear-blend-skinning path that produces live
//! vertex positions from a pose.

use crate::error::{Error, Result};
use crate::math::{Quat, Rigid, Vec3};

/// Skinned triangle mesh with skeleton. Immutable after construction;
/// construction validates all structural invariants.
#[derive(Debug, Clone)]
pub struct TemplateMesh {
    pub rest_vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Parent joint index per joint; the single root points at itself.
    pub joint_parents: Vec<usize>,
    pub joint_rest_positions: Vec<Vec3>,
    /// Row-major M x J convex weights.
    pub skin_weights: Vec<f32>,
}

impl TemplateMesh {
    pub fn new(
        rest_vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        joint_parents: Vec<usize>,
        joint_rest_positions: Vec<Vec3>,
        mut skin_weights: Vec<f32>,
    ) -> Result<TemplateMesh> {
        let m = rest_vertices.len();
        let j = joint_parents.len();
        if m < 3 {
            return Err(Error::data(format!("mesh needs at least 3 vertices, got {m}")));
        }
        if j < 1 {
            return Err(Error::data("skeleton needs at least one joint"));
        }
        if joint_rest_positions.len() != j {
            return Err(Error::data("joint_rest_positions length != joint count"));
        }
        if skin_weights.len() != m * j {
            return Err(Error::data(format!(
                "skin_weights must be M*J = {} values, got {}",
                m * j,
                skin_weights.len()
            )));
        }
        for (i, v) in rest_vertices.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::data(format!("rest vertex {i} is not finite")));
            }
        }
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&vi| vi >= m) {
                return Err(Error::data(format!("face {i} references vertex out of range")));
            }
            let (a, b, c) = (rest_vertices[f[0]], rest_vertices[f[1]], rest_vertices[f[2]]);
            if (b - a).cross(c - a).norm() <= 1e-12 {
                return Err(Error::data(format!("face {i} has zero area in the rest mesh")));
            }
        }
        let roots = joint_parents.iter().enumerate().filter(|&(i, &p)| p == i).count();
        if roots != 1 {
            return Err(Error::data(format!("skeleton must have exactly one root, found {roots}")));
        }
        for (i, &p) in joint_parents.iter().enumerate() {
            if p >= j {
                return Err(Error::data(format!("joint {i} parent {p} out of range")));
            }
            // acyclic: walking up must reach the root within J hops
            let (mut cur, mut hops) = (i, 0);
            while joint_parents[cur] != cur {
                cur = joint_parents[cur];
                hops += 1;
                if hops > j {
                    return Err(Error::data(format!("joint parent chain at {i} has a cycle")));
                }
            }
        }
        // Rows summing to 1 within 1e-4 are renormalized (text-format
        // rounding); worse violations mean a corrupt asset.
        for v in 0..m {
            let row = &mut skin_weights[v * j..(v + 1) * j];
            let mut sum = 0.0f32;
            for &w in row.iter() {
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::data(format!("vertex {v} has a negative or non-finite weight")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-4 {
                return Err(Error::data(format!("vertex {v} weight row sums to {sum}, not 1")));
            }
            for w in row.iter_mut() {
                *w /= sum;
            }
        }
        Ok(TemplateMesh { rest_vertices, faces, joint_parents, joint_rest_positions, skin_weights })
    }

    pub fn vertex_count(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn joint_count(&self) -> usize {
        self.joint_parents.len()
    }

    pub fn weight(&self, vertex: usize, joint: usize) -> f32 {
        self.skin_weights[vertex * self.joint_count() + joint]
    }

    /// Joints in parent-before-child order (root first).
    fn topo_order(&self) -> Vec<usize> {
        let j = self.joint_count();
        let mut order = Vec::with_capacity(j);
        let mut placed = vec![false; j];
        while order.len() < j {
            for i in 0..j {
                if !placed[i] && (self.joint_parents[i] == i || placed[self.joint_parents[i]]) {
                    placed[i] = true;
                    order.push(i);
                }
            }
        }
        order
    }
}

/// Per-frame articulation state.
#[derive(Debug, Clone)]
pub struct Pose {
    pub joint_rotations: Vec<Quat>,
    pub root_translation: Vec3,
    pub frame_time: i64,
}

impl Pose {
    pub fn rest(joint_count: usize, frame_time: i64) -> Pose {
        Pose {
            joint_rotations: vec![Quat::IDENTITY; joint_count],
            root_translation: Vec3::ZERO,
            frame_time,
        }
    }
}

/// Live vertex positions produced by [`pose_vertices`].
#[derive(Debug, Clone)]
pub struct PosedVertices {
    pub positions: Vec<Vec3>,
    pub frame_time: i64,
}

/// Computes the global rigid transform of every joint.
///
/// Each local transform rotates about the joint's rest position; the root
/// additionally carries the pose's root translation. Children compose onto
/// their parent's global transform.
pub fn forward_kinematics(mesh: &TemplateMesh, pose: &Pose) -> Result<Vec<Rigid>> {
    let j = mesh.joint_count();
    if pose.joint_rotations.len() != j {
        return Err(Error::config(format!(
            "pose has {} rotations for {} joints",
            pose.joint_rotations.len(),
            j
        )));
    }
    let mut global = vec![Rigid::IDENTITY; j];
    for i in mesh.topo_order() {
        let local = Rigid::rotation_about(
            pose.joint_rotations[i].to_mat3(),
            mesh.joint_rest_positions[i],
        );
        global[i] = if mesh.joint_parents[i] == i {
            Rigid::translation(pose.root_translation).compose(local)
        } else {
            global[mesh.joint_parents[i]].compose(local)
        };
    }
    Ok(global)
}

/// Linear blend skinning: each vertex is the skin-weight convex combination
/// of its rest position pushed through every joint's global transform.
pub fn pose_vertices(mesh: &TemplateMesh, pose: &Pose) -> Result<PosedVertices> {
    let global = forward_kinematics(mesh, pose)?;
    let j = mesh.joint_count();
    let mut positions = Vec::with_capacity(mesh.vertex_count());
    for (v, &rest) in mesh.rest_vertices.iter().enumerate() {
        let mut p = Vec3::ZERO;
        for (g, &w) in global.iter().zip(&mesh.skin_weights[v * j..(v + 1) * j]) {
            if w != 0.0 {
                p = p + g.apply(rest) * w;
            }
        }
        positions.push(p);
    }
    Ok(PosedVertices { positions, frame_time: pose.frame_time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{vec3, Mat3};

    /// Tetrahedron skinned to a 2-joint chain: root at origin, child at
    /// (0, 1, 0); upper vertices follow the child, lower follow the root.
    fn two_joint_rig() -> TemplateMesh {
        TemplateMesh::new(
            vec![
                vec3(0.0, 0.0, 0.0),
                vec3(1.0, 0.0, 0.0),
                vec3(0.0, 2.0, 0.0),
                vec3(1.0, 2.0, 0.0),
            ],
            vec![[0, 1, 2], [1, 3, 2]],
            vec![0, 0],
            vec![vec3(0.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0)],
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn identity_pose_gives_identity_transforms_and_rest_positions() {
        let mesh = two_joint_rig();
        let pose = Pose::rest(2, 0);
        let g = forward_kinematics(&mesh, &pose).unwrap();
        for t in &g {
            assert_eq!(*t, Rigid::IDENTITY);
        }
        let posed = pose_vertices(&mesh, &pose).unwrap();
        assert_eq!(posed.positions, mesh.rest_vertices);
    }

    #[test]
    fn root_rotation_propagates_to_all_joints() {
        let mesh = two_joint_rig();
        let q = Quat::from_axis_angle(vec3(0.0, 0.0, 1.0), std::f32::consts::FRAC_PI_2);
        let pose = Pose {
            joint_rotations: vec![q, Quat::IDENTITY],
            root_translation: Vec3::ZERO,
            frame_time: 0,
        };
        let g = forward_kinematics(&mesh, &pose).unwrap();
        let expected = Rigid::rotation_about(q.to_mat3(), vec3(0.0, 0.0, 0.0));
        for t in &g {
            for r in 0..3 {
                for c in 0..3 {
                    assert!((t.rot.m[r][c] - expected.rot.m[r][c]).abs() < 1e-6);
                }
            }
            assert!((t.trans - expected.trans).norm() < 1e-6);
        }
    }

    #[test]
    fn child_rotation_matches_hand_composed_matrices() {
        let mesh = two_joint_rig();
        let q = Quat::from_axis_angle(vec3(0.0, 0.0, 1.0), std::f32::consts::FRAC_PI_2);
        let pose = Pose {
            joint_rotations: vec![Quat::IDENTITY, q],
            root_translation: Vec3::ZERO,
            frame_time: 0,
        };
        let g = forward_kinematics(&mesh, &pose).unwrap();
        assert_eq!(g[0], Rigid::IDENTITY);
        // Hand composition: rotate 90 deg about Z around pivot (0,1,0):
        // p -> R p + (pivot - R pivot); R (0,1,0) = (-1,0,0),
        // so trans = (0,1,0) - (-1,0,0) = (1,1,0), and
        // (1,2,0) -> R(1,2,0) + trans = (-2,1,0) + (1,1,0) = (-1,2,0).
        let posed = g[1].apply(vec3(1.0, 2.0, 0.0));
        assert!((posed - vec3(-1.0, 2.0, 0.0)).norm() < 1e-6, "{posed:?}");
        assert!((g[1].trans - vec3(1.0, 1.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn lbs_matches_brute_force_weighted_transforms() {
        let mesh = two_joint_rig();
        let pose = Pose {
            joint_rotations: vec![
                Quat::from_axis_angle(vec3(1.0, 0.0, 0.0), 0.3),
                Quat::from_axis_angle(vec3(0.0, 0.0, 1.0), -0.8),
            ],
            root_translation: vec3(0.2, -0.1, 0.5),
            frame_time: 3,
        };
        let posed = pose_vertices(&mesh, &pose).unwrap();
        let g = forward_kinematics(&mesh, &pose).unwrap();
        for v in 0..mesh.vertex_count() {
            let mut expect = Vec3::ZERO;
            for jj in 0..mesh.joint_count() {
                expect = expect + g[jj].apply(mesh.rest_vertices[v]) * mesh.weight(v, jj);
            }
            assert!((posed.positions[v] - expect).norm() == 0.0);
        }
    }

    #[test]
    fn whole_body_rigid_motion_equivariance() {
        let mesh = two_joint_rig();
        let pose = Pose {
            joint_rotations: vec![
                Quat::from_axis_angle(vec3(0.0, 1.0, 0.0), 0.9),
                Quat::from_axis_angle(vec3(1.0, 0.0, 0.0), 0.4),
            ],
            root_translation: vec3(0.0, 0.0, 0.0),
            frame_time: 0,
        };
        let base = pose_vertices(&mesh, &pose).unwrap();
        // prepend a global rigid motion via the root joint
        let extra = Quat::from_axis_angle(vec3(0.0, 0.0, 1.0), 0.6);
        let shifted = Pose {
            joint_rotations: vec![
                // root local rotation composes with the global one
                compose_quat(extra, pose.joint_rotations[0]),
                pose.joint_rotations[1],
            ],
            root_translation: vec3(0.3, 0.4, -0.2),
            frame_time: 0,
        };
        let moved = pose_vertices(&mesh, &shifted).unwrap();
        let rig = Rigid::translation(vec3(0.3, 0.4, -0.2)).compose(Rigid::rotation_about(
            extra.to_mat3(),
            mesh.joint_rest_positions[0],
        ));
        for (got, base_p) in moved.positions.iter().zip(&base.positions) {
            assert!((*got - rig.apply(*base_p)).norm() < 1e-5);
        }
    }

    #[test]
    fn convexity_posed_vertex_inside_hull_of_per_joint_copies() {
        let mesh = two_joint_rig();
        // soften the weights so both joints matter
        let mut weights = mesh.skin_weights.clone();
        weights.copy_from_slice(&[0.7, 0.3, 0.6, 0.4, 0.3, 0.7, 0.2, 0.8]);
        let mesh = TemplateMesh::new(
            mesh.rest_vertices.clone(),
            mesh.faces.clone(),
            mesh.joint_parents.clone(),
            mesh.joint_rest_positions.clone(),
            weights,
        )
        .unwrap();
        let pose = Pose {
            joint_rotations: vec![
                Quat::from_axis_angle(vec3(0.0, 0.0, 1.0), 0.5),
                Quat::from_axis_angle(vec3(0.0, 0.0, 1.0), -1.0),
            ],
            root_translation: Vec3::ZERO,
            frame_time: 0,
        };
        let posed = pose_vertices(&mesh, &pose).unwrap();
        let g = forward_kinematics(&mesh, &pose).unwrap();
        // with 2 joints the hull is a segment: check the point lies on it
        for v in 0..mesh.vertex_count() {
            let a = g[0].apply(mesh.rest_vertices[v]);
            let b = g[1].apply(mesh.rest_vertices[v]);
            let p = posed.positions[v];
            let ab = b - a;
            let t = (p - a).dot(ab) / ab.dot(ab);
            assert!((-1e-5..=1.0 + 1e-5).contains(&t));
            assert!((a + ab * t - p).norm() < 1e-5);
        }
    }

    #[test]
    fn rejects_bad_meshes() {
        let verts = vec![vec3(0.0, 0.0, 0.0), vec3(1.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0)];
        let joints = vec![vec3(0.0, 0.0, 0.0)];
        // face index out of range
        assert!(TemplateMesh::new(
            verts.clone(),
            vec![[0, 1, 3]],
            vec![0],
            joints.clone(),
            vec![1.0; 3]
        )
        .is_err());
        // degenerate face
        let flat = vec![vec3(0.0, 0.0, 0.0), vec3(1.0, 0.0, 0.0), vec3(2.0, 0.0, 0.0)];
        assert!(
            TemplateMesh::new(flat, vec![[0, 1, 2]], vec![0], joints.clone(), vec![1.0; 3])
                .is_err()
        );
        // two roots
        assert!(TemplateMesh::new(
            verts.clone(),
            vec![[0, 1, 2]],
            vec![0, 1],
            vec![vec3(0.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0)],
            vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
        )
        .is_err());
        // cycle
        assert!(TemplateMesh::new(
            verts.clone(),
            vec![[0, 1, 2]],
            vec![1, 0, 0],
            vec![vec3(0.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0), vec3(0.0, 2.0, 0.0)],
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        )
        .is_err());
        // bad weight row
        assert!(TemplateMesh::new(
            verts.clone(),
            vec![[0, 1, 2]],
            vec![0],
            joints.clone(),
            vec![1.0, 1.0, 0.9],
        )
        .is_err());
        // slightly-off weight row is renormalized
        let mesh = TemplateMesh::new(
            verts,
            vec![[0, 1, 2]],
            vec![0],
            joints,
            vec![1.00005, 1.0, 1.0],
        )
        .unwrap();
        assert!((mesh.weight(0, 0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pose_length_mismatch_is_config_error() {
        let mesh = two_joint_rig();
        let pose = Pose::rest(3, 0);
        assert!(matches!(
            forward_kinematics(&mesh, &pose),
            Err(crate::error::Error::Config(_))
        ));
    }

    fn compose_quat(a: Quat, b: Quat) -> Quat {
        // Hamilton product, only needed by tests.
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
        .unwrap()
    }

    #[test]
    fn determinism_bit_identical() {
        let mesh = two_joint_rig();
        let pose = Pose {
            joint_rotations: vec![
                Quat::from_axis_angle(vec3(0.3, 0.2, 0.9), 1.3),
                Quat::from_axis_angle(vec3(0.1, -0.7, 0.2), -0.5),
            ],
            root_translation: vec3(0.01, 0.02, 0.03),
            frame_time: 1,
        };
        let a = pose_vertices(&mesh, &pose).unwrap();
        let b = pose_vertices(&mesh, &pose).unwrap();
        for (x, y) in a.positions.iter().zip(&b.positions) {
            assert_eq!(x.x.to_bits(), y.x.to_bits());
            assert_eq!(x.y.to_bits(), y.y.to_bits());
            assert_eq!(x.z.to_bits(), y.z.to_bits());
        }
    }

    #[test]
    fn mat3_root_motion_equivalence_sanity() {
        // pose_vertices with one effective joint is rigid
        let mesh = two_joint_rig();
        let mut w = vec![0.0; 8];
        for v in 0..4 {
            w[v * 2] = 1.0;
        }
        let mesh = TemplateMesh::new(
            mesh.rest_vertices.clone(),
            mesh.faces.clone(),
            mesh.joint_parents.clone(),
            mesh.joint_rest_positions.clone(),
            w,
        )
        .unwrap();
        let q = Quat::from_axis_angle(vec3(0.2, 1.0, -0.3), 0.77);
        let pose = Pose {
            joint_rotations: vec![q, Quat::IDENTITY],
            root_translation: vec3(1.0, 2.0, 3.0),
            frame_time: 0,
        };
        let posed = pose_vertices(&mesh, &pose).unwrap();
        let rig = Rigid::translation(vec3(1.0, 2.0, 3.0))
            .compose(Rigid::rotation_about(q.to_mat3(), Vec3::ZERO));
        for (got, rest) in posed.positions.iter().zip(&mesh.rest_vertices) {
            assert!((*got - rig.apply(*rest)).norm() < 1e-6);
        }
        let _ = Mat3::IDENTITY;
    }
}
