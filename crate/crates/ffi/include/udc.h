#ifndef UDC_H
#define UDC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum UdcStatus {
  UDC_STATUS_OK = 0,
  UDC_STATUS_NULL_POINTER = 1,
  UDC_STATUS_INVALID_ARGUMENT = 2,
  UDC_STATUS_SHAPE = 3,
  UDC_STATUS_IO = 4,
  UDC_STATUS_FORMAT = 5,
  UDC_STATUS_NUMERIC = 6,
  UDC_STATUS_PANIC = 7,
} UdcStatus;

/**
 * Border model for [`udc_wiener`].
 */
typedef enum UdcBoundary {
  UDC_BOUNDARY_REPLICATE = 0,
  UDC_BOUNDARY_ZERO_SCENE = 1,
} UdcBoundary;

/**
 * PCA basis for kernel codes.
 */
typedef struct UdcBasis UdcBasis;

/**
 * Three-channel image.
 */
typedef struct UdcImage UdcImage;

/**
 * Trained restoration network.
 */
typedef struct UdcModel UdcModel;

/**
 * Per-channel PSF with its rotation angle and channel gains.
 */
typedef struct UdcPsf UdcPsf;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *udc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *udc_version(void);

/**
 * Create an image from `3 * width * height` interleaved samples.
 *
 * # Safety
 * `rgb` must point to that many readable values; `out` must be writable.
 */
enum UdcStatus udc_image_new(size_t width, size_t height, const double *rgb, struct UdcImage **out);

/**
 * # Safety
 * `img` must be null or a live handle.
 */
size_t udc_image_width(const struct UdcImage *img);

/**
 * # Safety
 * `img` must be null or a live handle.
 */
size_t udc_image_height(const struct UdcImage *img);

/**
 * Copy interleaved samples into `rgb`, which must hold exactly
 * `3 * width * height` values.
 *
 * # Safety
 * `rgb` must point to `len` writable values.
 */
enum UdcStatus udc_image_copy(const struct UdcImage *img, double *rgb, size_t len);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UdcStatus udc_image_read_pfm(const char *path, struct UdcImage **out);

/**
 * # Safety
 * `img` must be a live handle; `path` a NUL-terminated string.
 */
enum UdcStatus udc_image_write_pfm(const struct UdcImage *img, const char *path);

/**
 * # Safety
 * `img` must be null or a handle not yet freed.
 */
void udc_image_free(struct UdcImage *img);

/**
 * Read a PSF and its `.meta` sidecar, if any.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UdcStatus udc_psf_read(const char *path, struct UdcPsf **out);

/**
 * Write a PSF and its `.meta` sidecar.
 *
 * # Safety
 * `psf` must be a live handle; `path` a NUL-terminated string.
 */
enum UdcStatus udc_psf_write(const struct UdcPsf *psf, const char *path);

/**
 * Isotropic Gaussian PSF of odd `size`.
 *
 * # Safety
 * `out` must be writable.
 */
enum UdcStatus udc_psf_gaussian(size_t size, double sigma, struct UdcPsf **out);

/**
 * Rotate by `angle_deg` (counter-clockwise, at most 45 in magnitude).
 *
 * # Safety
 * `psf` must be a live handle; `out` must be writable.
 */
enum UdcStatus udc_psf_rotate(const struct UdcPsf *psf, double angle_deg, struct UdcPsf **out);

/**
 * # Safety
 * `psf` must be null or a live handle.
 */
size_t udc_psf_size(const struct UdcPsf *psf);

/**
 * # Safety
 * `psf` must be null or a handle not yet freed.
 */
void udc_psf_free(struct UdcPsf *psf);

/**
 * Degrade an HDR scene with `psf`, producing the tone-mapped degraded and
 * target images.
 *
 * # Safety
 * Handles must be live; `degraded` and `target` must be writable.
 */
enum UdcStatus udc_simulate_degraded(const struct UdcImage *scene,
                                     const struct UdcPsf *psf,
                                     double x_max,
                                     double alpha,
                                     double noise_sigma,
                                     uint64_t seed,
                                     struct UdcImage **degraded,
                                     struct UdcImage **target);

/**
 * Wiener deconvolution of a tone-mapped image. `nsr` holds three
 * per-channel noise-to-signal ratios.
 *
 * # Safety
 * Handles must be live; `nsr` must point to 3 values; `out` writable.
 */
enum UdcStatus udc_wiener(const struct UdcImage *img,
                          const struct UdcPsf *psf,
                          const double *nsr,
                          double alpha,
                          enum UdcBoundary boundary,
                          struct UdcImage **out);

/**
 * PSNR in dB for images in `[0, peak]`; +inf for identical images.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum UdcStatus udc_psnr(const struct UdcImage *a,
                        const struct UdcImage *b,
                        double peak,
                        double *out);

/**
 * Mean SSIM over the three channels.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum UdcStatus udc_ssim(const struct UdcImage *a, const struct UdcImage *b, double *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UdcStatus udc_basis_read(const char *path, struct UdcBasis **out);

/**
 * # Safety
 * `basis` must be null or a live handle.
 */
size_t udc_basis_code_dim(const struct UdcBasis *basis);

/**
 * Project `psf` onto `basis`; `code` must hold exactly `code_dim` values.
 *
 * # Safety
 * Handles must be live; `code` must point to `len` writable values.
 */
enum UdcStatus udc_encode_kernel(const struct UdcPsf *psf,
                                 const struct UdcBasis *basis,
                                 double *code,
                                 size_t len);

/**
 * # Safety
 * `basis` must be null or a handle not yet freed.
 */
void udc_basis_free(struct UdcBasis *basis);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UdcStatus udc_model_read(const char *path, struct UdcModel **out);

/**
 * Length of the kernel code the model expects.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t udc_model_code_dim(const struct UdcModel *model);

/**
 * Restore `img` given its kernel code, tiling with `tile` and `overlap`
 * (pass 0 for defaults). The output is not clamped.
 *
 * # Safety
 * Handles must be live; `code` must point to `code_len` values; `out`
 * must be writable.
 */
enum UdcStatus udc_model_infer(const struct UdcModel *model,
                               const struct UdcImage *img,
                               const double *code,
                               size_t code_len,
                               size_t tile,
                               size_t overlap,
                               struct UdcImage **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void udc_model_free(struct UdcModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UDC_H */
