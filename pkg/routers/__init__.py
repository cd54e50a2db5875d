from routers.commitments import router as commitments_router
