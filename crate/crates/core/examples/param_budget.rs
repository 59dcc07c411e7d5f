//! Prints the trainable parameter breakdown at full scale and for the toy model.

use skadapter::nn::{count_params, ModelConfig};

fn main() {
    let full = count_params(&ModelConfig::full_scale());
    println!("{full}");
    println!();
    let toy = count_params(&ModelConfig::default());
    println!("{toy}");
    println!();
    println!("toy total {} / full total {}", toy.total(), full.total());
}
