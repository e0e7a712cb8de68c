//! Classifier-free guidance with a conditional ε-network: w = 1 is the
//! conditional prediction, w = 0 the unconditional one, and the rest
//! extrapolate along their difference.

use latent_adv::diffusion::{cfg_predict, EpsilonModel, Guidance, NoiseSchedule};
use latent_adv::models::{EmbeddingTable, ScoreNet, FAKE_STYLE};
use latent_adv::{rng, Tensor};

fn main() -> latent_adv::Result<()> {
    let net = ScoreNet::init(&mut rng::stream(2, 0), 8);
    let table = EmbeddingTable::init(&mut rng::stream(2, 1));
    let cond = table.embed(FAKE_STYLE)?;
    let null = table.null();
    let schedule = NoiseSchedule::new(100, 1e-4, 0.02, 20)?;
    let step = schedule.ddim_timestep(1);
    let z = Tensor::new(vec![1, 8], rng::normals(&mut rng::stream(2, 2), 8))?;

    let conditional = net.predict(&z, step, &cond)?;
    let unconditional = net.predict(&z, step, &null)?;
    for w in [0.0, 1.0, 2.0, 4.0] {
        let eps = cfg_predict(&net, &z, step, &Guidance::new(&cond, &null, w))?;
        println!(
            "w = {w}: |ε − ε_cond| = {:.3e}, |ε − ε_null| = {:.3e}",
            eps.sub(&conditional)?.l2_norm(),
            eps.sub(&unconditional)?.l2_norm()
        );
    }
    Ok(())
}
