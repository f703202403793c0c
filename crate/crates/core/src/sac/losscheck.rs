//! Finite-difference checks of the composed SAC losses with respect to the
//! agent's own parameters.

use super::agent::Agent;
use crate::autodiff::{relative_error, ParamId, ParamStore, Tape, Tensor};
use crate::error::Result;

/// Fixed inputs for a loss evaluation.
#[derive(Debug, Clone)]
pub struct LossProbe {
    pub obs: Tensor<f64>,
    pub action: Tensor<f64>,
    pub y: Vec<f64>,
    pub noise: Vec<f64>,
    pub alpha: f64,
}

type Pick = fn(&mut Agent<f64>) -> &mut ParamStore<f64>;

fn check(
    agent: &mut Agent<f64>,
    stores: &[Pick],
    loss: &dyn Fn(&Agent<f64>) -> Result<(f64, Vec<Vec<Option<Vec<f64>>>>)>,
    h: f64,
    max_per_param: usize,
) -> Result<(f64, String)> {
    let (_, analytic) = loss(agent)?;
    let mut worst = (0.0_f64, String::new());
    for (s, pick) in stores.iter().enumerate() {
        let n_params = pick(agent).len();
        for p in 0..n_params {
            let id = ParamId(p);
            let n = pick(agent).get(id).numel();
            let stride = n.div_ceil(max_per_param.max(1)).max(1);
            for i in (0..n).step_by(stride) {
                let orig = pick(agent).get(id).data()[i];
                pick(agent).get_mut(id).data_mut()[i] = orig + h;
                let up = loss(agent)?.0;
                pick(agent).get_mut(id).data_mut()[i] = orig - h;
                let down = loss(agent)?.0;
                pick(agent).get_mut(id).data_mut()[i] = orig;
                let a = analytic[s][p].as_ref().map_or(0.0, |g| g[i]);
                let err = relative_error(a, (up - down) / (2.0 * h));
                if err > worst.0 {
                    worst = (err, pick(agent).name(id).to_string());
                }
            }
        }
    }
    Ok(worst)
}

/// Largest relative error of the critic-loss gradient over encoder and
/// critic parameters.
pub fn check_critic_loss(agent: &mut Agent<f64>, probe: &LossProbe, h: f64, max_per_param: usize) -> Result<(f64, String)> {
    let loss = |a: &Agent<f64>| -> Result<(f64, Vec<Vec<Option<Vec<f64>>>>)> {
        let mut tape = Tape::new();
        let x = tape.input(&probe.obs, false);
        let act = tape.input(&probe.action, false);
        let (l, _) = a.critic_loss(&mut tape, x, act, &probe.y)?;
        let g = tape.backward(l)?;
        Ok((
            tape.scalar(l),
            vec![g.param_grads(&a.nets.encoder_params), g.param_grads(&a.nets.critic_params)],
        ))
    };
    check(agent, &[|a| &mut a.nets.encoder_params, |a| &mut a.nets.critic_params], &loss, h, max_per_param)
}

/// Largest relative error of the actor-loss gradient over actor parameters,
/// through the reparameterized sample at fixed noise.
pub fn check_actor_loss(agent: &mut Agent<f64>, probe: &LossProbe, h: f64, max_per_param: usize) -> Result<(f64, String)> {
    let loss = |a: &Agent<f64>| -> Result<(f64, Vec<Vec<Option<Vec<f64>>>>)> {
        let mut tape = Tape::new();
        let x = tape.input(&probe.obs, false);
        let (l, _) = a.actor_loss(&mut tape, x, &probe.noise, probe.alpha)?;
        let g = tape.backward(l)?;
        Ok((tape.scalar(l), vec![g.param_grads(&a.nets.actor_params)]))
    };
    check(agent, &[|a| &mut a.nets.actor_params], &loss, h, max_per_param)
}
