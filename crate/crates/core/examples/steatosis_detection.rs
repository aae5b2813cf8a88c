//! Bright-region detection and the shape cascade on a small synthetic field.

use steatosis::detection::{detect_regions, Classification, DetectionParams};
use steatosis::ellipse::EllipseParams;
use steatosis::raster::RgbRaster;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut img = RgbRaster::new(260, 160, [190, 110, 150]);
    let mut paint = |pixels: Vec<(i64, i64)>| {
        for (x, y) in pixels {
            img.put(x as u32, y as u32, [250, 248, 250]);
        }
    };
    paint(EllipseParams::circle(40.0, 60.0, 22.0).rasterize());
    paint(EllipseParams::circle(110.0, 60.0, 18.0).rasterize());
    paint(EllipseParams::circle(140.0, 64.0, 18.0).rasterize());
    // a thin streak, like a sinusoid lumen
    paint((20..240).flat_map(|x| (132..138).map(move |y| (x, y))).collect());

    let params = DetectionParams::default();
    let regions = detect_regions(&img, None, &params)?;
    for r in &regions {
        let f = &r.features;
        let label = match r.classification {
            Classification::Isolated => "isolated".to_string(),
            Classification::Overlapped => "overlapped".to_string(),
            Classification::Rejected(why) => format!("rejected ({why:?})"),
        };
        println!(
            "region {:>2}: area {:>5} C^-1 {:.3} solidity {:.3} extent {:.3} -> {label}",
            r.id, f.area, f.inv_circularity, f.solidity, f.extent
        );
    }
    Ok(())
}
