//! Parses a small skeleton and prints its clipped hop distances and relation codes.

use skadapter::skeleton::{bone_list, parse_skeleton, Relation, TopologyMatrices};

const TEXT: &str = "\
6
0.0 0.0 0.0 -1
0.0 0.2 0.0 0
-0.2 0.3 0.0 1
0.2 0.3 0.0 1
0.0 -0.2 0.1 0
0.0 -0.4 0.1 4
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let skel = parse_skeleton(TEXT)?;
    let topo = TopologyMatrices::new(&skel, 3)?;
    println!("joints={} bones={:?}", skel.len(), bone_list(&skel));
    println!("distance (d_max=3):");
    for i in 0..skel.len() {
        let row: Vec<String> = (0..skel.len()).map(|j| topo.distance(i, j).to_string()).collect();
        println!("  {}", row.join(" "));
    }
    println!("relations:");
    let names = [
        Relation::SelfLoop,
        Relation::Parent,
        Relation::Child,
        Relation::Sibling,
        Relation::Distant,
        Relation::EndEffector,
    ];
    for i in 0..skel.len() {
        let row: Vec<String> = (0..skel.len())
            .map(|j| {
                let code = topo.relation(i, j);
                format!("{:?}", names.iter().find(|r| r.code() == code).unwrap())
            })
            .collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
