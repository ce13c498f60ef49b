/* Print MobileNet-V1 cost with and without ULSAM.
 *
 *   cargo build -p ulsam-ffi
 *   cc -I crates/ffi/include crates/ffi/examples/cost.c -L target/debug -lulsam_ffi -o cost
 *   LD_LIBRARY_PATH=target/debug ./cost
 */
#include <stdio.h>
#include <inttypes.h>
#include "ulsam.h"

static int check(UlsamStatus s) {
    if (s != ULSAM_STATUS_OK) {
        fprintf(stderr, "error %d: %s\n", (int)s, ulsam_last_error());
        return 1;
    }
    return 0;
}

int main(void) {
    UlsamModel *model = NULL;
    UlsamCost cost;
    if (check(ulsam_model_mv1(1.0, 1000, 0, &model))) return 1;
    if (check(ulsam_model_cost(model, 224, &cost))) return 1;
    printf("mv1        params %" PRIu64 "  MACs %" PRIu64 "\n", cost.params, cost.macs);
    if (check(ulsam_model_apply_ulsam(model, "8:1, 9:1, 11", 4))) return 1;
    if (check(ulsam_model_cost(model, 224, &cost))) return 1;
    printf("mv1+ulsam  params %" PRIu64 "  MACs %" PRIu64 "\n", cost.params, cost.macs);
    ulsam_model_free(model);
    return 0;
}
