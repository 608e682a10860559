use crate::error::Result;
use crate::optim::{adam_step, AdamConfig, GroupState};
use crate::raster::CloudGradients;
use crate::scene::GaussianCloud;

/// Parameter groups in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Position,
    LogScale,
    Rotation,
    Opacity,
    Color,
    Feature,
}

pub const GROUPS: [Group; 6] = [
    Group::Position,
    Group::LogScale,
    Group::Rotation,
    Group::Opacity,
    Group::Color,
    Group::Feature,
];

impl Group {
    pub fn width(self, feature_dim: usize) -> usize {
        match self {
            Group::Position | Group::LogScale | Group::Color => 3,
            Group::Rotation => 4,
            Group::Opacity => 1,
            Group::Feature => feature_dim,
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn gather(self, cloud: &GaussianCloud) -> Vec<f64> {
        let mut out = Vec::with_capacity(cloud.len() * self.width(cloud.feature_dim()));
        for g in cloud.gaussians() {
            match self {
                Group::Position => out.extend(g.position.iter()),
                Group::LogScale => out.extend(g.log_scale.iter()),
                Group::Rotation => out.extend(g.rotation),
                Group::Opacity => out.push(g.opacity_logit),
                Group::Color => out.extend(g.color.iter()),
                Group::Feature => out.extend(&g.feature),
            }
        }
        out
    }

    fn scatter(self, cloud: &mut GaussianCloud, values: &[f64]) {
        let w = self.width(cloud.feature_dim());
        for (g, v) in cloud.gaussians_mut().iter_mut().zip(values.chunks(w.max(1))) {
            match self {
                Group::Position => g.position.copy_from_slice(v),
                Group::LogScale => g.log_scale.copy_from_slice(v),
                Group::Rotation => {
                    g.rotation.copy_from_slice(v);
                    g.renormalize_rotation();
                }
                Group::Opacity => g.opacity_logit = v[0],
                Group::Color => g.color.copy_from_slice(v),
                Group::Feature => g.feature.copy_from_slice(v),
            }
        }
    }
}

/// Adam state for every parameter group of a cloud, one row per Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudAdam {
    pub config: AdamConfig,
    groups: Vec<GroupState>,
}

impl CloudAdam {
    pub fn new(rows: usize, feature_dim: usize, config: AdamConfig) -> Self {
        Self {
            config,
            groups: GROUPS
                .iter()
                .map(|g| GroupState::new(g.width(feature_dim), rows))
                .collect(),
        }
    }

    pub fn group(&self, g: Group) -> &GroupState {
        &self.groups[g.index()]
    }

    /// Row count of every group; all equal the Gaussian count.
    pub fn row_counts(&self) -> [usize; 6] {
        std::array::from_fn(|i| self.groups[i].rows())
    }

    pub fn reorder(&mut self, keep: &[usize], fresh: usize) {
        self.groups.iter_mut().for_each(|g| g.reorder(keep, fresh));
    }

    /// Steps the listed groups with their learning rates.
    pub fn step(&mut self, cloud: &mut GaussianCloud, grads: &CloudGradients, lrs: &[(Group, f64)]) -> Result<()> {
        let all = grads.groups();
        for &(group, lr) in lrs {
            let mut values = group.gather(cloud);
            adam_step(
                &mut values,
                all[group.index()],
                &mut self.groups[group.index()].state,
                lr,
                &self.config,
            )?;
            group.scatter(cloud, &values);
        }
        Ok(())
    }
}
