//! Save a model's named tensors to the checkpoint container and read them
//! back bitwise.

use latent_adv::data::checkpoint::{from_bytes, to_bytes};
use latent_adv::models::{ClassifierNet, Parameterized};
use latent_adv::rng;

fn main() -> latent_adv::Result<()> {
    let net = ClassifierNet::init(&mut rng::stream(4, 0), 32);
    let named: Vec<_> = net.params().into_iter().map(|(n, t)| (n, (*t).clone())).collect();
    let bytes = to_bytes(&named)?;
    println!("{} tensors, {} bytes", named.len(), bytes.len());
    let back = from_bytes(&bytes)?;
    for ((a, x), (b, y)) in named.iter().zip(&back) {
        assert_eq!((a, x), (b, y));
        println!("{a}: {:?}", x.shape());
    }

    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    println!("corrupt magic: {}", from_bytes(&corrupt).unwrap_err());
    Ok(())
}
