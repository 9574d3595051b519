//! Grids a disk and a box, locates points, and writes the disk grid as JSON
//! and SVG.

use mas_abstraction::geometry::{self, CellDecomposition, Domain};
use mas_abstraction::svg::{SvgCanvas, PALETTE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let disk = Domain::disk(vec![0.0, 0.0], 10.0)?;
    let side = geometry::fit_side(&disk, 0.25)?;
    let dec = CellDecomposition::build_grid(disk.clone(), side)?;
    let clipped = dec.cells().iter().filter(|c| c.clipped).count();
    println!(
        "disk: side {side:.6}, {} cells ({clipped} clipped), d_max {:.6}, d_in {:.6}",
        dec.len(),
        dec.d_max(),
        dec.d_in()
    );

    for p in [[0.0, 0.0], [5.0, -3.0], [9.99, 0.0]] {
        let id = dec.locate(&p)?;
        let cell = dec.cell(id);
        println!(
            "{p:?} -> cell {id}, reference point {:?}, clipped {}",
            cell.reference_point, cell.clipped
        );
    }
    let ball = dec.cells_meeting_ball(&[5.0, 3.0], 0.4, false);
    println!("closed ball B((5, 3), 0.4) meets {} cells", ball.len());

    let boxed = Domain::boxed(vec![0.0, 0.0], vec![3.0, 2.0])?;
    let bdec = CellDecomposition::build_grid(boxed, 0.5)?;
    println!("box: {} cells, counts {:?}", bdec.len(), bdec.grid_counts());

    let out = std::env::temp_dir();
    std::fs::write(out.join("grid.json"), serde_json::to_string(&dec.to_json())?)?;
    let boundary: Vec<_> = dec.cells().iter().filter(|c| c.clipped).map(|c| c.id).collect();
    let mut svg = SvgCanvas::new(&disk, 500.0);
    svg.domain(&disk)
        .cells(&dec, &boundary, PALETTE[1], 0.5)
        .cells(&dec, &ball, PALETTE[0], 0.8);
    std::fs::write(out.join("grid.svg"), svg.finish())?;
    println!("wrote grid.json and grid.svg to {}", out.display());
    Ok(())
}
