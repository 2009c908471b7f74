//! Coarsen the test-case grids and move fields between fidelities.

use mgrl::grid::{build_partition, prolong, restrict_by_role, CartesianGrid, FieldRole, ScalarField};

fn main() -> mgrl::Result<()> {
    for (nx, ny) in [(61, 61), (31, 91)] {
        let dims: Vec<String> = [1.0, 0.5, 0.25]
            .iter()
            .map(|&beta| {
                let map = build_partition(nx, ny, beta)?;
                let (cx, cy) = map.coarse_dims();
                Ok(format!("beta {beta}: {cx}x{cy}"))
            })
            .collect::<mgrl::Result<_>>()?;
        println!("{nx}x{ny} -> {}", dims.join(", "));
    }

    let fine = CartesianGrid::new(7, 5, 700.0, 500.0)?;
    let map = build_partition(7, 5, 0.5)?;
    println!("7x5 at beta 0.5: block sizes {:?}", map.block_sizes());

    let values: Vec<f64> = (0..fine.cell_count()).map(|i| 0.1 + 0.37 * i as f64).collect();
    let porosity = ScalarField::new(fine, values.clone(), FieldRole::Porosity)?;
    let coarse = restrict_by_role(&porosity, &map)?;
    let again = restrict_by_role(&prolong(&coarse, &map, &fine)?, &map)?;
    println!("mean: restrict(prolong(x)) == x exactly: {}", again.values() == coarse.values());

    let perm = ScalarField::new(fine, values.clone(), FieldRole::Permeability)?;
    println!("harmonic: {:?}", restrict_by_role(&perm, &map)?.values());

    let mut rates = vec![0.0; fine.cell_count()];
    rates[fine.index(0, 0)] = 150.0;
    rates[fine.index(1, 1)] = 50.0;
    rates[fine.index(6, 4)] = -200.0;
    let flows = ScalarField::new(fine, rates, FieldRole::FlowControl)?;
    let summed = restrict_by_role(&flows, &map)?;
    println!("sum: coarse rates {:?}, total {}", summed.values(), summed.sum());
    Ok(())
}
