use jsigan::jsinet::{Generator, GeneratorConfig};
use jsigan::tensor::graph::{Graph, Mode};
use jsigan::tensor::init::seeded;
use jsigan::tensor::{Shape, Tensor};
use rand::Rng;
use std::time::Instant;

fn main() {
    let mut rng = seeded(1);
    let gen = Generator::<f32>::new(GeneratorConfig::new(4).unwrap(), &mut rng);
    let x = Tensor::<f32>::from_fn(Shape::new(4, 3, 40, 40), |_, _, _, _| rng.gen_range(0.0..1.0));
    let y = Tensor::<f32>::from_fn(Shape::new(4, 3, 160, 160), |_, _, _, _| rng.gen_range(0.0..1.0));
    for _ in 0..2 {
        let t0 = Instant::now();
        let g = Graph::<f32>::new(Mode::Train);
        let out = gen.forward(&g, g.constant(x.clone())).unwrap();
        let fwd = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let loss = out.prediction.mse(g.constant(y.clone()));
        gen.params().zero_grads();
        g.backward(loss).unwrap();
        println!("G fwd {:.2}s bwd {:.2}s", fwd, t1.elapsed().as_secs_f64());
    }
}
