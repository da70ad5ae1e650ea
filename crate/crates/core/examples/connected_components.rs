//! Labels a small mask under both connectivities.

use riverseg::raster::{connected_components, BitGrid, ClassId, Connectivity, ComponentLabels, Dims, InstanceMask, MaskSource};

const ART: &str = "\
##....#.
##...#..
.......#
..###...
..#.#..#";

fn main() -> riverseg::Result<()> {
    let rows: Vec<&str> = ART.lines().collect();
    let dims = Dims::new(rows[0].len(), rows.len())?;
    let grid = BitGrid::from_fn(dims, |x, y| rows[y].as_bytes()[x] == b'#');

    for conn in [Connectivity::Four, Connectivity::Eight] {
        let labels = ComponentLabels::compute(&grid, conn);
        println!("{conn:?}: {} components, sizes {:?}", labels.count(), labels.sizes());
        for y in 0..dims.height {
            let line: String = (0..dims.width)
                .map(|x| match labels.labels()[dims.index(x, y)] {
                    0 => '.',
                    l => char::from_digit(l, 36).unwrap_or('?'),
                })
                .collect();
            println!("  {line}");
        }
    }

    let mask = InstanceMask::new(grid, ClassId::InSystemTrash, MaskSource::Predicted)?;
    for (i, c) in connected_components(&mask, Connectivity::Eight).iter().enumerate() {
        let p = riverseg::raster::centroid(c);
        println!("component {i}: area {}, centroid ({:.2}, {:.2})", c.area(), p.x, p.y);
    }
    Ok(())
}
