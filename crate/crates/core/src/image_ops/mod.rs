//! Map and image preprocessing: red-channel extraction, Haar denoising and
//! vertical Sobel edge detection.

mod gray;
mod sobel;
mod wavelet;

pub use gray::{area_resample, load_gray_png, red_channel, rgb_from_gray, GrayImage, ImageOrigin};
pub use sobel::{
    convolve3, parse_edge_csv, sobel_edges, sobel_magnitude, EdgeSet, CAMERA_SOBEL_THRESHOLD,
    DEFAULT_EDGE_COUNT, REFLECTANCE_SOBEL_THRESHOLD, SOBEL_LEFT, SOBEL_RIGHT,
};
pub use wavelet::{
    haar_forward, haar_inverse, wavelet_filter, WaveletMode, REFLECTANCE_WAVELET_THRESHOLD,
};
