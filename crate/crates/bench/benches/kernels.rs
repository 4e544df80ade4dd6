use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector3;
use partfield_core::generator::{extract_density_grid, render_view, GeneratorModel, LatentNoise};
use partfield_core::mesh::{marching_tets, rasterize, TetGrid};
use partfield_core::pipeline::World;
use partfield_core::prior::{DiffusionSchedule, NoisePredictor, ToyPrior, Vocabulary};
use partfield_core::rng::{normal_vec, stream_rng};
use partfield_core::image::Image;
use std::hint::black_box;

fn setup() -> (World, GeneratorModel, LatentNoise) {
    let world = World::default();
    let model = GeneratorModel::init(world.generator.clone(), 0).unwrap();
    let z = LatentNoise::sample(&mut stream_rng(0, 99, 0), model.config.latent_dim);
    (world, model, z)
}

fn volume_render(c: &mut Criterion) {
    let (world, model, z) = setup();
    let cam = world.distributions.front_camera();
    let params = world.rest_params(cam);
    c.bench_function("render_view 32x16", |b| {
        b.iter(|| render_view(&model, &z, &params, &cam, (32, 16)).unwrap())
    });
}

fn sphere(n: usize) -> TetGrid {
    let h = 2.0 / (n - 1) as f64;
    let mut g = TetGrid::new(n, [-1.0; 3], [h; 3]).unwrap();
    for v in 0..g.rest.len() {
        g.sdf[v] = g.rest[v].norm() - 0.6;
    }
    g
}

fn meshing(c: &mut Criterion) {
    let grid = sphere(24);
    c.bench_function("marching_tets 24^3", |b| b.iter(|| marching_tets(black_box(&grid))));

    let (world, model, z) = setup();
    let cam = world.distributions.front_camera();
    let posed = partfield_core::generator::PosedGenerator::new(&model, &z, &world.rest_params(cam)).unwrap();
    c.bench_function("extract_density_grid 16^3", |b| b.iter(|| extract_density_grid(&posed, 16).unwrap()));

    let mut mesh = marching_tets(&grid).mesh;
    mesh.colors = mesh.vertices.iter().map(|v| Vector3::from(*v).map(|x| 0.5 + 0.5 * x).into()).collect();
    c.bench_function("rasterize 64x64", |b| b.iter(|| rasterize(&mesh, &cam, (64, 64), [1.0; 3])));
}

fn denoiser(c: &mut Criterion) {
    let world = World::default();
    let prior = ToyPrior::init(Vocabulary::new(&world.regions), DiffusionSchedule::default(), 16, 0);
    let y = prior.embed("red upper, blue lower").unwrap();
    let x = Image::from_vec(3, 32, 16, normal_vec(&mut stream_rng(0, 98, 0), 1536)).unwrap();
    c.bench_function("denoiser forward 32x16", |b| b.iter(|| prior.predict_noise(black_box(&x), 100, &y)));
}

criterion_group!(benches, volume_render, meshing, denoiser);
criterion_main!(benches);
