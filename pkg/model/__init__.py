
from model.paginate import PaginateRequest
