#ifndef EMSDEPLOY_H
#define EMSDEPLOY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum EmsStatus {
  EMS_STATUS_OK = 0,
  EMS_STATUS_NULL_POINTER = 1,
  EMS_STATUS_INVALID_ARGUMENT = 2,
  EMS_STATUS_SOLVER_ERROR = 3,
  EMS_STATUS_SIMULATION_ERROR = 4,
  EMS_STATUS_PANIC = 5,
} EmsStatus;

/**
 * Opaque grid handle; create with `ems_grid_new`, release with
 * `ems_grid_free`.
 */
typedef struct EmsGrid EmsGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call on the same thread.
 */
const char *ems_last_error_message(void);

/**
 * Builds a grid with straight-line travel times at `speed_kmh`.
 *
 * # Safety
 * `stations` and `hospitals` must point to the given number of cell
 * indices; `out` must be valid for writes.
 */
enum EmsStatus ems_grid_new(double min_lat,
                            double max_lat,
                            double min_lon,
                            double max_lon,
                            size_t n_rows,
                            size_t n_cols,
                            double speed_kmh,
                            const size_t *stations,
                            size_t n_stations,
                            const size_t *hospitals,
                            size_t n_hospitals,
                            struct EmsGrid **out);

/**
 * Releases a grid. Null is ignored.
 *
 * # Safety
 * `grid` must come from `ems_grid_new` and not be used afterwards.
 */
void ems_grid_free(struct EmsGrid *grid);

/**
 * # Safety
 * `grid` must be a live handle; `out` must be valid for writes.
 */
enum EmsStatus ems_grid_n_cells(const struct EmsGrid *grid, size_t *out);

/**
 * Cell containing a point.
 *
 * # Safety
 * `grid` must be a live handle; `out` must be valid for writes.
 */
enum EmsStatus ems_grid_assign_cell(const struct EmsGrid *grid,
                                    double lat,
                                    double lon,
                                    size_t *out);

/**
 * Travel time in seconds between two cells.
 *
 * # Safety
 * `grid` must be a live handle; `out` must be valid for writes.
 */
enum EmsStatus ems_grid_travel_time(const struct EmsGrid *grid,
                                    size_t from,
                                    size_t to,
                                    double *out);

/**
 * Smallest `k` with `P(Poisson(rate) <= k) >= 1 - alpha`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum EmsStatus ems_poisson_var(double rate, double alpha, uint32_t *out);

/**
 * Minimum unmet demand for stationing `x` and demand `d`. `edges` holds
 * `n_edges` (station, region) pairs, flattened.
 *
 * # Safety
 * All arrays must hold the stated number of elements; `out_total` must be
 * valid for writes.
 */
enum EmsStatus ems_min_shortfall(const uint32_t *x,
                                 size_t n_stations,
                                 const uint32_t *d,
                                 size_t n_regions,
                                 const size_t *edges,
                                 size_t n_edges,
                                 uint64_t *out_total);

/**
 * Stochastic stationing over `n_scenarios` demand rows of `n_regions`
 * counts each (row-major). Writes `n_stations` counts to `x_out`, the mean
 * shortfall to `objective_out` and 1 to `exact_out` when optimality was
 * proven within `max_nodes`.
 *
 * # Safety
 * All arrays must hold the stated number of elements; out pointers must be
 * valid for writes.
 */
enum EmsStatus ems_solve_stochastic(const uint32_t *scenarios,
                                    size_t n_scenarios,
                                    size_t n_regions,
                                    size_t n_stations,
                                    const size_t *edges,
                                    size_t n_edges,
                                    uint32_t fleet,
                                    size_t max_nodes,
                                    uint32_t *x_out,
                                    double *objective_out,
                                    int32_t *exact_out);

/**
 * Simulates `n_calls` calls (`times_s` ascending, cells on `grid`) under
 * stationing `x` with lognormal on-scene minutes `(mu, sigma)` and writes
 * the mean response time in seconds.
 *
 * # Safety
 * `grid` must be a live handle; arrays must hold the stated number of
 * elements; `out` must be valid for writes.
 */
enum EmsStatus ems_simulate_mean_response(const struct EmsGrid *grid,
                                          const uint32_t *x,
                                          size_t n_stations,
                                          const double *times_s,
                                          const size_t *cells,
                                          size_t n_calls,
                                          double mu,
                                          double sigma,
                                          uint64_t seed,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMSDEPLOY_H */
