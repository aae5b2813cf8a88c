//! Moving points between pyramid levels and between the local and global frames.

use steatosis::raster::RgbRaster;
use steatosis::slide::{global_from_local, local_from_global, map_level_coords, read_region, BoundingBox, Point2, PyramidImage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = RgbRaster::new(1024, 768, [240, 240, 240]);
    let p = PyramidImage::from_base("coords", base, 4);
    for info in p.levels() {
        println!("level {}: {}x{}", info.level_index, info.width, info.height);
    }

    let l4 = Point2::global(12.5, 7.25, 4);
    let l0 = map_level_coords(l4, 4, 0)?;
    println!("{l4:?} -> {l0:?}");

    let bbox = BoundingBox { x0: 10, y0: 6, width: 20, height: 12, level: 4 };
    let fine = bbox.to_level(0);
    println!("box at L4 {bbox:?}\n    at L0 {fine:?}");
    let crop = read_region(&p, 0, &fine)?;
    println!("crop {}x{}", crop.width(), crop.height());

    // local frame: origin at the top-left of a W x H window centered on `center`
    let center = fine.center();
    let (w, h) = (fine.width as f64, fine.height as f64);
    let local = Point2::local(3.0, 4.0);
    let g = global_from_local(local, center, w, h)?;
    let back = local_from_global(g, center, w, h)?;
    println!("local {local:?} -> global {g:?} -> {back:?}");
    Ok(())
}
