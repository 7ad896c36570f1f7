#ifndef PDFUSION_H
#define PDFUSION_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PdfStatus {
  PDF_STATUS_OK = 0,
  PDF_STATUS_NULL_POINTER = 1,
  PDF_STATUS_INVALID_ARGUMENT = 2,
  PDF_STATUS_IO = 3,
  PDF_STATUS_COMPUTE = 4,
  PDF_STATUS_PANIC = 5,
} PdfStatus;

// Per-model class probabilities for a set of subjects.
typedef struct PdfEnsemble PdfEnsemble;

// A trained network loaded from a checkpoint.
typedef struct PdfModel PdfModel;

// A VOL1 volume.
typedef struct PdfVolume PdfVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on the same thread.
const char *pdf_last_error(void);

// Library version as a static NUL-terminated string.
const char *pdf_version(void);

// MD and FA of one symmetric tensor given as `xx, yy, zz, xy, xz, yz`.
//
// # Safety
// `tensor` must point to 6 doubles; `md` and `fa` to writable doubles.
enum PdfStatus pdf_dti_scalars(const double *tensor, double *md, double *fa);

// Modulated rank average weights for `n` accuracies, written to `out[n]`.
//
// # Safety
// `accuracies` must point to `n` doubles and `out` to `n` writable doubles.
enum PdfStatus pdf_mra_weights(const double *accuracies, size_t n, double *out);

// Accuracy and macro precision, recall and F1 written to `out[4]`.
//
// # Safety
// `truth` and `predicted` must point to `n` class codes; `out` to 4 doubles.
enum PdfStatus pdf_metrics(const uint32_t *truth, const uint32_t *predicted, size_t n, double *out);

// Reads a VOL1 file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a writable handle slot.
enum PdfStatus pdf_volume_read(const char *path, struct PdfVolume **out);

// Writes depth, height and width to `dims[3]`.
//
// # Safety
// `volume` must be a live handle; `dims` must point to 3 writable sizes.
enum PdfStatus pdf_volume_dims(const struct PdfVolume *volume, size_t *dims);

// # Safety
// `volume` must be null or a handle from [`pdf_volume_read`] not yet freed.
void pdf_volume_free(struct PdfVolume *volume);

// Loads a checkpoint and its `.spec` sidecar.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a writable handle slot.
enum PdfStatus pdf_model_load(const char *path, struct PdfModel **out);

// Subject-level class probabilities for a volume, written to `probs[3]`.
//
// # Safety
// `model` and `volume` must be live handles; `probs` must point to 3 doubles.
enum PdfStatus pdf_model_predict(const struct PdfModel *model,
                                 const struct PdfVolume *volume,
                                 double *probs);

// # Safety
// `model` must be null or a handle from [`pdf_model_load`] not yet freed.
void pdf_model_free(struct PdfModel *model);

// Builds an ensemble from `probs[subjects][models][3]`, row-major. Models are
// named `m0`, `m1`, ... and subjects `s0`, `s1`, ....
//
// # Safety
// `probs` must point to `subjects * models * 3` doubles; `out` a writable handle slot.
enum PdfStatus pdf_ensemble_new(const double *probs,
                                size_t subjects,
                                size_t models,
                                struct PdfEnsemble **out);

// Reads an ensemble CSV (`subject_id,model,p_hc,p_pd,p_swedd`).
//
// # Safety
// `path` must be a NUL-terminated string; `out` a writable handle slot.
enum PdfStatus pdf_ensemble_read(const char *path, struct PdfEnsemble **out);

// Number of subjects and models.
//
// # Safety
// `ensemble` must be a live handle; `subjects` and `models` writable.
enum PdfStatus pdf_ensemble_shape(const struct PdfEnsemble *ensemble,
                                  size_t *subjects,
                                  size_t *models);

// # Safety
// `ensemble` must be null or a handle from this library not yet freed.
void pdf_ensemble_free(struct PdfEnsemble *ensemble);

// Weighted-average fusion. Writes one class code per subject to `predicted`.
//
// # Safety
// `weights` must point to one double per model; `predicted` to one slot per subject.
enum PdfStatus pdf_fuse(const struct PdfEnsemble *ensemble,
                        const double *weights,
                        size_t n_weights,
                        uint32_t *predicted);

// Plurality vote per subject, written as class codes to `predicted`.
//
// # Safety
// `predicted` must point to one slot per subject.
enum PdfStatus pdf_majority_vote(const struct PdfEnsemble *ensemble, uint32_t *predicted);

// Grid search around `initial` for the weights with the best fused accuracy
// against `labels`. Writes the weights to `out_weights` and the accuracy to
// `out_accuracy`.
//
// # Safety
// `labels` must point to one code per subject; `initial` and `out_weights` to
// one double per model; `out_accuracy` to a writable double.
enum PdfStatus pdf_owaf_search(const struct PdfEnsemble *ensemble,
                               const uint32_t *labels,
                               const double *initial,
                               double radius,
                               double step,
                               double *out_weights,
                               double *out_accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDFUSION_H */
